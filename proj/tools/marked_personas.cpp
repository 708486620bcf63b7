// marked-personas: generate -> analyze -> report.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <fstream>
#include <iostream>

#include "marked/error.hpp"
#include "marked/pipeline.hpp"

namespace {

using marked::ErrorClass;

int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::config: return 2;
    case ErrorClass::network: return 3;
    case ErrorClass::analysis: return 4;
  }
  return 1;
}

struct Overrides {
  std::string config;
  std::string corpus;
  std::string out;
  std::optional<double> prior_strength;
  std::optional<double> z_threshold;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> models;
};

marked::RunConfig build_config(const Overrides& o) {
  marked::RunConfig cfg = o.config.empty() ? marked::RunConfig{} : marked::RunConfig::load(o.config);
  if (!o.corpus.empty()) cfg.corpus = o.corpus;
  if (!o.out.empty()) cfg.out = o.out;
  if (o.prior_strength) cfg.prior_strength = *o.prior_strength;
  if (o.z_threshold) cfg.z_threshold = *o.z_threshold;
  if (!o.seeds.empty()) cfg.seeds = o.seeds;
  if (!o.models.empty()) cfg.models = o.models;
  return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run config (JSON)")->check(CLI::ExistingFile);
  cmd->add_option("--corpus", o.corpus, "Persona corpus (JSONL)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Marked-words analysis of demographic persona corpora"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging to stderr");

  Overrides o;
  bool dry_run = false;
  std::string bundle;
  std::string report_out;

  auto* gen = app.add_subcommand("generate", "Query the endpoint for every prompt in the grid");
  add_common(gen, o);
  gen->add_option("--model", o.models, "Model name (repeatable)");
  gen->add_flag("--dry-run", dry_run, "Plan the grid without sending requests");

  auto* analyze = app.add_subcommand("analyze", "Write the report bundle for a corpus");
  add_common(analyze, o);
  analyze->add_option("--out", o.out, "Output directory");
  analyze->add_option("--prior-strength", o.prior_strength, "Dirichlet prior strength");
  analyze->add_option("--z-threshold", o.z_threshold, "Significance threshold on z");
  analyze->add_option("--seeds", o.seeds, "Classifier split seeds")->delimiter(',');

  auto* report = app.add_subcommand("report", "Render a bundle as markdown");
  report->add_option("bundle", bundle, "Bundle directory")->required()->check(CLI::ExistingDirectory);
  report->add_option("-o,--output", report_out, "Write to a file instead of stdout");

  auto* refusal = app.add_subcommand("refusal-scan", "Refusal rate per template and model");
  add_common(refusal, o);

  CLI11_PARSE(app, argc, argv);
  spdlog::set_default_logger(spdlog::stderr_color_mt("marked"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::warn);

  try {
    if (*gen) {
      marked::cmd_generate(build_config(o), dry_run, std::cout);
    } else if (*analyze) {
      marked::cmd_analyze(build_config(o), std::cout);
    } else if (*report) {
      const std::string text = marked::cmd_report(bundle);
      if (report_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(report_out, std::ios::binary);
        if (!out) throw marked::ConfigError("cannot write " + report_out);
        out << text;
      }
    } else if (*refusal) {
      const auto cfg = build_config(o);
      const auto corpus = marked::load_personas(cfg.corpus, cfg.schema);
      marked::write_refusal_tsv(std::cout, marked::refusal_scan(corpus, cfg.refusal_markers));
    }
  } catch (const marked::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
