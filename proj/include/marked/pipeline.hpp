#pragma once

// Run configuration and the generate -> analyze -> report stages.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "marked/classify.hpp"
#include "marked/genclient.hpp"

namespace marked {

struct AnalysisToggles {
  bool markedwords = true;
  bool jsd = true;
  bool classify = true;
  bool lexicons = true;
  bool sentiment = true;
  bool refusal = true;
};

struct LexiconRef {
  std::string name;
  std::filesystem::path path;
};

enum class PriorScope { all, model };
/// Which full-axis combinations get an intersectional report: those whose
/// first axis is marked (4 x 3 = 12 with the default schema), those with any
/// marked value, or those marked on every axis.
enum class IntersectionPolicy { first_axis_marked, any_marked, all_marked };

struct RunConfig {
  std::optional<std::filesystem::path> schema;
  std::string templates = "persona";
  int samples_per_prompt = 15;
  std::vector<std::string> models{"gpt-4"};
  double temperature = 1.0;
  std::optional<int> max_tokens;
  EndpointConfig endpoint;
  std::filesystem::path corpus = "corpus.jsonl";
  std::optional<std::filesystem::path> failures;
  std::optional<std::filesystem::path> human_corpus;
  std::filesystem::path out = "out";
  AnalysisToggles analyses;
  std::vector<LexiconRef> lexicons;
  std::vector<GroupSelector> lexicon_groups;
  std::optional<std::filesystem::path> sentiment_lexicon;
  std::optional<std::filesystem::path> identity_stoplist;
  std::vector<std::string> tracked_words{"resilient", "resilience"};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  double prior_strength = 500.0;
  double z_threshold = 1.96;
  std::int64_t min_count = 0;
  PriorScope prior_scope = PriorScope::all;
  IntersectionPolicy intersections = IntersectionPolicy::first_axis_marked;
  std::size_t jsd_top_k = 10;
  std::size_t svm_top_k = 10;
  double test_fraction = 0.2;
  SvmConfig svm;
  std::vector<std::string> refusal_markers{"language model"};

  /// Relative paths resolve against base_dir.
  static RunConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& path);

  /// Range checks plus existence of every referenced input file.
  void validate() const;
  AxisSchema load_schema() const;
  std::filesystem::path failures_path() const;
};

struct GenerateSummary {
  std::size_t planned = 0;
  std::size_t cached = 0;
  std::size_t requests = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  std::vector<RefusalRow> refusals;
};

/// Renders the grid for every configured model and runs it against the
/// endpoint, appending to the corpus file. With dry_run nothing is sent.
GenerateSummary cmd_generate(const RunConfig& cfg, bool dry_run, std::ostream& log);

/// The groups that get a marked-words report: every marked value of each
/// axis alone, then the full-axis intersections allowed by the policy.
std::vector<GroupSelector> marked_groups(const AxisSchema& schema, IntersectionPolicy policy);

/// Writes the report bundle (TSV + JSON + manifest.json) under cfg.out.
void cmd_analyze(const RunConfig& cfg, std::ostream& log);

/// Markdown summary of a bundle written by cmd_analyze.
std::string cmd_report(const std::filesystem::path& bundle_dir);

}  // namespace marked
