#include "marked/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

#include "marked/error.hpp"
#include "marked/format.hpp"
#include "marked/jsdshift.hpp"
#include "marked/lexmetrics.hpp"
#include "marked/markedwords.hpp"
#include "marked/sentiment.hpp"

namespace marked {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename Fn>
auto config_field(const char* key, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw ConfigError(std::string(what) + " not found: " + p.filename().string());
}

}  // namespace

RunConfig RunConfig::from_json(const json& j, const fs::path& base) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> known = {
      "schema", "templates", "samples_per_prompt", "models", "temperature", "max_tokens", "endpoint", "corpus",
      "failures", "human_corpus", "out", "analyses", "lexicons", "lexicon_groups", "sentiment_lexicon",
      "identity_stoplist", "tracked_words", "seeds", "prior_strength", "z_threshold", "min_count", "prior_scope",
      "intersections", "jsd_top_k", "svm_top_k", "test_fraction", "svm", "refusal_markers"};
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
  }

  RunConfig c;
  auto path_opt = [&](const char* key, std::optional<fs::path>& dst) {
    if (j.contains(key)) dst = resolve(base, config_field(key, [&] { return j[key].get<std::string>(); }));
  };
  path_opt("schema", c.schema);
  path_opt("failures", c.failures);
  path_opt("human_corpus", c.human_corpus);
  path_opt("sentiment_lexicon", c.sentiment_lexicon);
  path_opt("identity_stoplist", c.identity_stoplist);
  if (j.contains("corpus")) c.corpus = resolve(base, config_field("corpus", [&] { return j["corpus"].get<std::string>(); }));
  if (j.contains("out")) c.out = resolve(base, config_field("out", [&] { return j["out"].get<std::string>(); }));

  auto get = [&](const char* key, auto& dst) {
    using T = std::decay_t<decltype(dst)>;
    if (j.contains(key)) dst = config_field(key, [&] { return j[key].get<T>(); });
  };
  get("templates", c.templates);
  get("samples_per_prompt", c.samples_per_prompt);
  get("models", c.models);
  get("temperature", c.temperature);
  if (j.contains("max_tokens")) c.max_tokens = config_field("max_tokens", [&] { return j["max_tokens"].get<int>(); });
  get("tracked_words", c.tracked_words);
  get("seeds", c.seeds);
  get("prior_strength", c.prior_strength);
  get("z_threshold", c.z_threshold);
  get("min_count", c.min_count);
  get("jsd_top_k", c.jsd_top_k);
  get("svm_top_k", c.svm_top_k);
  get("test_fraction", c.test_fraction);
  get("refusal_markers", c.refusal_markers);

  if (j.contains("endpoint")) c.endpoint = EndpointConfig::from_json(j["endpoint"]);
  if (j.contains("analyses")) {
    const auto& a = j["analyses"];
    if (!a.is_object()) throw ConfigError("config key 'analyses' must be an object");
    for (const auto& [k, v] : a.items()) {
      bool on = config_field("analyses", [&] { return v.get<bool>(); });
      if (k == "markedwords") c.analyses.markedwords = on;
      else if (k == "jsd") c.analyses.jsd = on;
      else if (k == "classify") c.analyses.classify = on;
      else if (k == "lexicons") c.analyses.lexicons = on;
      else if (k == "sentiment") c.analyses.sentiment = on;
      else if (k == "refusal") c.analyses.refusal = on;
      else throw ConfigError("unknown analysis toggle '" + k + "'");
    }
  }
  if (j.contains("lexicons")) {
    for (const auto& l : j["lexicons"]) {
      LexiconRef r;
      r.path = resolve(base, config_field("lexicons", [&] { return l.at("path").get<std::string>(); }));
      r.name = l.contains("name") ? l["name"].get<std::string>() : r.path.stem().string();
      c.lexicons.push_back(std::move(r));
    }
  }
  if (j.contains("lexicon_groups")) {
    for (const auto& g : j["lexicon_groups"]) {
      c.lexicon_groups.emplace_back(config_field("lexicon_groups", [&] { return g.get<std::map<std::string, std::string>>(); }));
    }
  }
  if (j.contains("svm")) {
    const auto& s = j["svm"];
    c.svm.c = config_field("svm.c", [&] { return s.value("c", c.svm.c); });
    c.svm.epochs = config_field("svm.epochs", [&] { return s.value("epochs", c.svm.epochs); });
  }
  if (j.contains("prior_scope")) {
    auto s = config_field("prior_scope", [&] { return j["prior_scope"].get<std::string>(); });
    if (s == "all") c.prior_scope = PriorScope::all;
    else if (s == "model") c.prior_scope = PriorScope::model;
    else throw ConfigError("prior_scope must be 'all' or 'model'");
  }
  if (j.contains("intersections")) {
    auto s = config_field("intersections", [&] { return j["intersections"].get<std::string>(); });
    if (s == "first_axis_marked") c.intersections = IntersectionPolicy::first_axis_marked;
    else if (s == "any_marked") c.intersections = IntersectionPolicy::any_marked;
    else if (s == "all_marked") c.intersections = IntersectionPolicy::all_marked;
    else throw ConfigError("intersections must be 'first_axis_marked', 'any_marked' or 'all_marked'");
  }
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.filename().string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path.filename().string() + " is not valid JSON");
  return from_json(j, path.parent_path());
}

void RunConfig::validate() const {
  if (!(prior_strength > 0.0)) throw ConfigError("prior_strength must be positive");
  if (!(z_threshold > 0.0)) throw ConfigError("z_threshold must be positive");
  if (min_count < 0) throw ConfigError("min_count must be non-negative");
  if (samples_per_prompt < 1) throw ConfigError("samples_per_prompt must be at least 1");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must lie in (0, 1)");
  if (jsd_top_k < 1) throw ConfigError("jsd_top_k must be at least 1");
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (refusal_markers.empty()) throw ConfigError("at least one refusal marker is required");
  if (models.empty()) throw ConfigError("at least one model is required");
  endpoint.validate();
  if (schema) require_file(*schema, "schema file");
  if (human_corpus) require_file(*human_corpus, "human corpus");
  if (sentiment_lexicon) require_file(*sentiment_lexicon, "sentiment lexicon");
  if (identity_stoplist) require_file(*identity_stoplist, "identity stoplist");
  for (const auto& l : lexicons) require_file(l.path, "lexicon");
}

AxisSchema RunConfig::load_schema() const { return schema ? AxisSchema::load(*schema) : AxisSchema::default_schema(); }

fs::path RunConfig::failures_path() const {
  if (failures) return *failures;
  fs::path p = corpus;
  p += ".failures.jsonl";
  return p;
}

// ---------------------------------------------------------------------------
// generate

GenerateSummary cmd_generate(const RunConfig& cfg, bool dry_run, std::ostream& log) {
  cfg.validate();
  const AxisSchema schema = cfg.load_schema();
  const auto templates = select_templates(cfg.templates);
  std::vector<GenerationJob> jobs;
  for (const auto& model : cfg.models) {
    GenerationParams params{model, cfg.temperature, cfg.max_tokens.value_or(default_max_tokens(model))};
    auto grid = render_grid(schema, templates, cfg.samples_per_prompt, params);
    jobs.insert(jobs.end(), grid.begin(), grid.end());
  }
  GenerateSummary s;
  s.planned = jobs.size();
  log << "planned " << s.planned << " jobs (" << cfg.models.size() << " model(s) x " << schema.full_groups().size()
      << " groups x " << templates.size() << " templates x " << cfg.samples_per_prompt << " samples)\n";
  if (dry_run) {
    log << "dry run: 0 requests\n";
    return s;
  }
  RunResult r = run_jobs(jobs, cfg.endpoint, schema, cfg.corpus, cfg.failures_path());
  s.cached = r.stats.cached;
  s.requests = r.stats.requests;
  s.completed = r.stats.completed;
  s.failed = r.stats.failed;
  log << s.cached << " cached, " << s.completed << " completed, " << s.failed << " failed, " << s.requests
      << " requests\n";
  s.refusals = refusal_scan(r.corpus, cfg.refusal_markers);
  for (const auto& row : s.refusals) {
    log << "refusals " << row.template_id << " " << row.model << ": " << fmt_num(row.pct) << "% (" << row.refused << "/"
        << row.n << ")\n";
  }
  if (s.failed > 0) log << "failed jobs recorded in " << cfg.failures_path().filename().string() << "\n";
  return s;
}

// ---------------------------------------------------------------------------
// analyze

std::vector<GroupSelector> marked_groups(const AxisSchema& schema, IntersectionPolicy policy) {
  std::vector<GroupSelector> out;
  for (const auto& axis : schema.axes()) {
    for (const auto& v : axis.values) {
      if (v != axis.unmarked) out.push_back(GroupSelector({{axis.name, v}}));
    }
  }
  if (schema.axes().size() < 2) return out;
  for (const auto& g : schema.full_groups()) {
    std::size_t marked = 0;
    for (const auto& [axis, value] : g.constraints()) marked += value != schema.at(axis).unmarked;
    const Axis& first = schema.axes().front();
    bool keep = false;
    switch (policy) {
      case IntersectionPolicy::first_axis_marked: keep = g.constraints().at(first.name) != first.unmarked; break;
      case IntersectionPolicy::any_marked: keep = marked > 0; break;
      case IntersectionPolicy::all_marked: keep = marked == g.arity(); break;
    }
    if (keep) out.push_back(g);
  }
  return out;
}

namespace {

const char* policy_name(IntersectionPolicy p) {
  switch (p) {
    case IntersectionPolicy::first_axis_marked: return "first_axis_marked";
    case IntersectionPolicy::any_marked: return "any_marked";
    case IntersectionPolicy::all_marked: return "all_marked";
  }
  return "";
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    out += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.' || c == '_' ? c : '_';
  }
  return out.empty() ? "_" : out;
}

[[noreturn]] void rethrow_in(const Error& e, const std::string& where) {
  const std::string msg = where + ": " + e.what();
  switch (e.error_class()) {
    case ErrorClass::config: throw ConfigError(msg);
    case ErrorClass::network: throw NetworkError(msg);
    case ErrorClass::analysis: throw AnalysisError(msg);
  }
  throw AnalysisError(msg);
}

template <typename Fn>
auto in_module(const std::string& where, Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    rethrow_in(e, where);
  }
}

class Bundle {
 public:
  explicit Bundle(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

  void write(const std::string& rel, const std::string& content) {
    fs::path p = root_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + rel);
    out << content;
  }
  void write_json(const std::string& rel, const json& j) { write(rel, j.dump(2) + "\n"); }

  void add(const std::string& analysis, const std::string& model, std::vector<std::string> files) {
    artifacts_.push_back({{"analysis", analysis}, {"model", model}, {"files", std::move(files)}});
  }
  void skip(const std::string& analysis, const std::string& reason) {
    skipped_.push_back({{"analysis", analysis}, {"reason", reason}});
  }
  json artifacts() const { return artifacts_; }
  json skipped() const { return skipped_; }

 private:
  fs::path root_;
  json artifacts_ = json::array();
  json skipped_ = json::array();
};

template <typename Fn>
std::string to_text(Fn&& fn) {
  std::ostringstream os;
  fn(os);
  return os.str();
}

bool has_group(const PersonaCorpus& c, const GroupSelector& g) {
  return std::any_of(c.personas().begin(), c.personas().end(), [&](const Persona& p) { return g.matches(p); });
}

std::vector<GroupSelector> default_lexicon_groups(const PersonaCorpus& gen, const PersonaCorpus* human) {
  std::vector<GroupSelector> out;
  const Axis& axis = gen.schema().axes().front();
  for (const auto& v : axis.values) {
    GroupSelector g({{axis.name, v}});
    if (has_group(gen, g) && (!human || has_group(*human, g))) out.push_back(g);
  }
  return out;
}

std::vector<std::vector<std::string>> classification_tasks(const AxisSchema& schema) {
  std::vector<std::vector<std::string>> tasks;
  for (const auto& a : schema.axes()) tasks.push_back({a.name});
  if (schema.axes().size() > 1) {
    std::vector<std::string> all;
    for (const auto& a : schema.axes()) all.push_back(a.name);
    tasks.push_back(all);
  }
  return tasks;
}

std::string join(const std::vector<std::string>& xs, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += xs[i];
  }
  return out;
}

// Records written before the source field existed carry no tag; anything in
// the main corpus is generated.
PersonaCorpus tag_generated(const PersonaCorpus& c) {
  std::vector<Persona> ps(c.personas().begin(), c.personas().end());
  for (auto& p : ps) {
    if (!p.source) p.source = Source::generated;
  }
  return PersonaCorpus(c.schema(), std::move(ps));
}

PersonaCorpus load_human(const fs::path& p, const AxisSchema& schema) {
  if (p.extension() == ".csv") return import_csv(p, schema);
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open human corpus " + p.filename().string());
  return parse_personas(in, schema);
}

}  // namespace

void cmd_analyze(const RunConfig& cfg, std::ostream& log) {
  cfg.validate();
  require_file(cfg.corpus, "corpus");
  const PersonaCorpus loaded = in_module("corpus", [&] { return load_personas(cfg.corpus, cfg.schema); });
  const PersonaCorpus corpus = loaded.filter([](const Persona& p) { return !p.refusal; });
  if (corpus.empty()) throw AnalysisError("corpus: no analyzable personas in " + cfg.corpus.filename().string());
  const AxisSchema& schema = corpus.schema();
  const auto models = corpus.models();
  const auto groups = marked_groups(schema, cfg.intersections);

  std::optional<PersonaCorpus> human;
  if (cfg.human_corpus) human = in_module("corpus", [&] { return load_human(*cfg.human_corpus, schema); });

  std::vector<StereotypeLexicon> lexicons;
  for (const auto& l : cfg.lexicons) {
    lexicons.push_back(in_module("lexmetrics", [&] { return StereotypeLexicon::load(l.path, l.name); }));
  }
  std::optional<SentimentLexicon> senti;
  if (cfg.sentiment_lexicon) senti = in_module("sentiment", [&] { return SentimentLexicon::load(*cfg.sentiment_lexicon); });
  std::vector<WordSet> stoplists{default_pronouns(), default_identity_descriptors()};
  if (cfg.identity_stoplist) {
    stoplists.push_back(in_module("classify", [&] { return load_word_list(*cfg.identity_stoplist); }));
  }

  Bundle bundle(cfg.out);
  const CountTable all_counts = corpus.counts();
  std::map<std::string, std::vector<MarkedWordReport>> reports_by_model;

  for (const auto& model : models) {
    const PersonaCorpus mc = corpus.for_model(model);
    const std::string dir = "models/" + slug(model) + "/";
    log << "analyzing model " << model << " (" << mc.size() << " personas)\n";

    PriorConfig prior;
    prior.prior_counts = cfg.prior_scope == PriorScope::all ? all_counts : mc.counts();
    prior.prior_strength = cfg.prior_strength;
    prior.z_threshold = cfg.z_threshold;
    prior.min_count = cfg.min_count;

    std::vector<MarkedWordReport> reports;
    std::vector<GroupSelector> present;
    for (const auto& g : groups) {
      if (has_group(mc, g)) present.push_back(g);
    }
    if (cfg.analyses.markedwords || cfg.analyses.jsd) {
      if (present.empty()) throw AnalysisError("markedwords [" + model + "]: corpus holds no marked group partition");
      for (const auto& g : present) {
        reports.push_back(in_module("markedwords [" + model + ", " + g.label(schema) + "]",
                                    [&] { return marked_words(mc, g, prior); }));
        reports.back().model = model;
      }
    }

    if (cfg.analyses.markedwords) {
      bundle.write(dir + "markedwords.tsv", to_text([&](std::ostream& os) { write_markedwords_tsv(os, reports); }));
      json arr = json::array();
      for (const auto& r : reports) arr.push_back(to_json(r));
      bundle.write_json(dir + "markedwords.json", {{"model", model}, {"reports", arr}});
      bundle.add("markedwords", model, {dir + "markedwords.tsv", dir + "markedwords.json"});
      reports_by_model[model] = reports;
    }

    if (cfg.analyses.jsd) {
      std::vector<JsdShiftResult> shifts;
      json arr = json::array();
      for (const auto& r : reports) {
        const CountTable target = partition(mc, r.group);
        for (const auto& c : r.per_comparison) {
          auto shift = in_module("jsdshift [" + model + ", " + r.label + " vs " + c.label + "]", [&] {
            return jsd_word_shift(target, partition(mc, c.group), cfg.jsd_top_k);
          });
          shift.target_label = r.label;
          shift.comparison_label = c.label;
          json js = to_json(shift);
          if (cfg.analyses.markedwords) {
            Agreement a = jsd_agreement(r, shift);
            js["agreement"] = {{"overlap", a.overlap}, {"jaccard", a.jaccard}};
          }
          arr.push_back(std::move(js));
          shifts.push_back(std::move(shift));
        }
      }
      bundle.write(dir + "jsd.tsv", to_text([&](std::ostream& os) { write_jsd_tsv(os, shifts); }));
      bundle.write_json(dir + "jsd.json", {{"model", model}, {"shifts", arr}});
      bundle.add("jsd", model, {dir + "jsd.tsv", dir + "jsd.json"});
    }

    if (cfg.analyses.classify) {
      json tasks = json::array();
      std::string tsv = "task\tgroup\trank\tword\tweight\n";
      std::vector<std::string> files{dir + "classify.tsv", dir + "classify.json"};
      for (const auto& axes : classification_tasks(schema)) {
        const std::string task = join(axes, "+");
        auto sweep = in_module("classify [" + model + ", " + task + "]", [&] {
          auto docs = make_documents(mc, axes, stoplists);
          return evaluate_seeds(docs, cfg.test_fraction, cfg.svm, cfg.seeds);
        });
        json top = json::object();
        for (const auto& g : sweep.first_model.groups) {
          auto words = top_features(sweep.first_model, g, cfg.svm_top_k);
          top[g] = words;
          const auto row = static_cast<Eigen::Index>(sweep.first_model.group_index(g));
          for (std::size_t i = 0; i < words.size(); ++i) {
            auto it = std::lower_bound(sweep.first_model.vocabulary.begin(), sweep.first_model.vocabulary.end(), words[i]);
            const auto col = static_cast<Eigen::Index>(it - sweep.first_model.vocabulary.begin());
            tsv += task + "\t" + g + "\t" + std::to_string(i + 1) + "\t" + words[i] + "\t" +
                   fmt_num(sweep.first_model.weights(row, col)) + "\n";
          }
        }
        const std::string model_file = dir + "svm_" + slug(task) + ".json";
        bundle.write(model_file, sweep.first_model.to_json().dump() + "\n");
        files.push_back(model_file);
        tasks.push_back({{"task", task},
                         {"label_axes", axes},
                         {"seeds", sweep.seeds},
                         {"accuracies", sweep.accuracies},
                         {"mean_accuracy", sweep.mean},
                         {"std_accuracy", sweep.stddev},
                         {"top_features", top},
                         {"model_file", model_file}});
      }
      bundle.write(dir + "classify.tsv", tsv);
      bundle.write_json(dir + "classify.json", {{"model", model}, {"test_fraction", cfg.test_fraction}, {"tasks", tasks}});
      bundle.add("classify", model, files);
    }

    if (cfg.analyses.lexicons) {
      if (lexicons.empty()) {
        if (model == models.front()) bundle.skip("lexicons", "no stereotype lexicons configured");
      } else {
        const PersonaCorpus* hp = human ? &*human : nullptr;
        auto lgroups = cfg.lexicon_groups.empty() ? default_lexicon_groups(mc, hp) : cfg.lexicon_groups;
        std::vector<RateReport> rows = in_module("lexmetrics [" + model + "]", [&] {
          if (hp) return compare_generated_vs_human(tag_generated(mc), *hp, lexicons, lgroups);
          std::vector<RateReport> out;
          for (const auto& g : lgroups) {
            for (const auto& lex : lexicons) {
              RateReport r = lexicon_rate(mc.select(g), lex);
              r.source = "generated";
              r.group = g.label(schema);
              out.push_back(std::move(r));
            }
          }
          return out;
        });
        std::string presence = "source\tgroup\tlist\tword\tpct\n";
        auto add_presence = [&](const std::string& source, const std::string& group, const std::string& list,
                                const PresenceReport& pr) {
          for (const auto& [w, pct] : pr.words) presence += source + "\t" + group + "\t" + list + "\t" + w + "\t" + fmt_num(pct) + "\n";
          if (!pr.other_words.empty()) {
            presence += source + "\t" + group + "\t" + list + "\tother words\t" + fmt_num(pr.other_words_pct) + "\n";
          }
        };
        for (const auto& g : lgroups) {
          for (const auto& lex : lexicons) {
            add_presence("generated", g.label(schema), lex.name, word_presence_rates(mc.select(g), lex.words(), &mc));
            if (hp) add_presence("human_written", g.label(schema), lex.name, word_presence_rates(hp->select(g), lex.words(), &mc));
          }
        }
        if (!cfg.tracked_words.empty()) {
          for (const auto& g : schema.full_groups()) {
            if (!has_group(mc, g)) continue;
            add_presence("generated", g.label(schema), "tracked", word_presence_rates(mc.select(g), cfg.tracked_words, &mc));
          }
        }
        json arr = json::array();
        for (const auto& r : rows) arr.push_back(to_json(r));
        bundle.write(dir + "lexicon_rates.tsv", to_text([&](std::ostream& os) { write_rates_tsv(os, rows); }));
        bundle.write_json(dir + "lexicon_rates.json", {{"model", model}, {"rows", arr}});
        bundle.write(dir + "word_presence.tsv", presence);
        bundle.add("lexicons", model, {dir + "lexicon_rates.tsv", dir + "lexicon_rates.json", dir + "word_presence.tsv"});
      }
    }

    if (cfg.analyses.sentiment) {
      if (!senti) {
        if (model == models.front()) bundle.skip("sentiment", "no sentiment lexicon configured");
      } else {
        json j = in_module("sentiment [" + model + "]", [&] {
          auto overall = corpus_sentiment(mc, *senti);
          json groups_j = json::array();
          std::string tsv = "group\tmean\tstd\tn\n";
          tsv += "all\t" + fmt_num(overall.mean) + "\t" + fmt_num(overall.stddev) + "\t" + std::to_string(overall.n) + "\n";
          for (const auto& g : schema.full_groups()) {
            if (!has_group(mc, g)) continue;
            auto st = corpus_sentiment(mc.select(g), *senti);
            groups_j.push_back({{"group", g.label(schema)}, {"mean", st.mean}, {"std", st.stddev}, {"n", st.n}});
            tsv += g.label(schema) + "\t" + fmt_num(st.mean) + "\t" + fmt_num(st.stddev) + "\t" + std::to_string(st.n) + "\n";
          }
          bundle.write(dir + "sentiment.tsv", tsv);
          json out{{"model", model},
                   {"overall", {{"mean", overall.mean}, {"std", overall.stddev}, {"n", overall.n}}},
                   {"groups", groups_j}};
          if (cfg.analyses.markedwords) {
            std::set<std::string> words;
            for (const auto& r : reports) {
              for (const auto& s : r.significant) words.insert(s.word);
            }
            auto ws = word_sentiment({words.begin(), words.end()}, *senti);
            out["significant_words"] = {{"n", ws.scores.size()},
                                        {"mean", ws.mean ? json(*ws.mean) : json(nullptr)},
                                        {"std", ws.stddev},
                                        {"negatives", ws.negatives}};
          }
          return out;
        });
        bundle.write_json(dir + "sentiment.json", j);
        bundle.add("sentiment", model, {dir + "sentiment.tsv", dir + "sentiment.json"});
      }
    }
  }

  if (cfg.analyses.markedwords) {
    if (models.size() < 2) {
      bundle.skip("overlap", "cross-model overlap needs at least two models");
    } else {
      json arr = json::array();
      std::string tsv = "group\tword\ttag\tmodels\tbest_z\n";
      for (const auto& g : groups) {
        std::vector<MarkedWordReport> per;
        for (const auto& m : models) {
          for (const auto& r : reports_by_model[m]) {
            if (r.group == g) per.push_back(r);
          }
        }
        if (per.size() < 2) continue;
        auto o = in_module("markedwords [overlap, " + g.label(schema) + "]", [&] { return cross_model_overlap(per); });
        arr.push_back(to_json(o));
        for (const auto& w : o.words) {
          tsv += o.label + "\t" + w.word + "\t" + std::string(to_string(w.tag)) + "\t" + join(w.models, ",") + "\t" +
                 fmt_num(w.best_z) + "\n";
        }
      }
      bundle.write("overlap.tsv", tsv);
      bundle.write_json("overlap.json", {{"groups", arr}});
      bundle.add("overlap", "", {"overlap.tsv", "overlap.json"});
    }
  }

  if (cfg.analyses.refusal) {
    auto rows = in_module("genclient [refusal-scan]", [&] { return refusal_scan(loaded, cfg.refusal_markers); });
    json arr = json::array();
    for (const auto& r : rows) {
      arr.push_back({{"template", r.template_id}, {"model", r.model}, {"n", r.n}, {"refused", r.refused}, {"pct", r.pct}});
    }
    bundle.write("refusal.tsv", to_text([&](std::ostream& os) { write_refusal_tsv(os, rows); }));
    bundle.write_json("refusal.json", {{"markers", cfg.refusal_markers}, {"rows", arr}});
    bundle.add("refusal", "", {"refusal.tsv", "refusal.json"});
  }

  json group_labels = json::array();
  for (const auto& g : groups) group_labels.push_back(g.label(schema));
  json manifest{
      {"format_version", 1},
      {"corpus", cfg.corpus.filename().string()},
      {"personas", loaded.size()},
      {"models", models},
      {"schema", schema.to_json()},
      {"marked_groups", group_labels},
      {"parameters",
       {{"prior_strength", cfg.prior_strength},
        {"z_threshold", cfg.z_threshold},
        {"min_count", cfg.min_count},
        {"prior_scope", cfg.prior_scope == PriorScope::all ? "all" : "model"},
        {"intersections", policy_name(cfg.intersections)},
        {"jsd_top_k", cfg.jsd_top_k},
        {"svm_top_k", cfg.svm_top_k},
        {"test_fraction", cfg.test_fraction},
        {"svm", {{"c", cfg.svm.c}, {"epochs", cfg.svm.epochs}}},
        {"seeds", cfg.seeds}}},
      {"analyses",
       {{"markedwords", cfg.analyses.markedwords},
        {"jsd", cfg.analyses.jsd},
        {"classify", cfg.analyses.classify},
        {"lexicons", cfg.analyses.lexicons},
        {"sentiment", cfg.analyses.sentiment},
        {"refusal", cfg.analyses.refusal}}},
      {"artifacts", bundle.artifacts()},
      {"skipped", bundle.skipped()}};
  bundle.write_json("manifest.json", manifest);
  log << "wrote report bundle with " << bundle.artifacts().size() << " artifacts\n";
}

// ---------------------------------------------------------------------------
// report

namespace {

json read_json(const fs::path& root, const std::string& rel) {
  std::ifstream in(root / rel);
  if (!in) throw ConfigError("bundle artifact missing: " + rel);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("bundle artifact is not valid JSON: " + rel);
  return j;
}

std::string json_file(const json& artifact) {
  for (const auto& f : artifact["files"]) {
    auto s = f.get<std::string>();
    if (s.size() > 5 && s.substr(s.size() - 5) == ".json" && s.find("/svm_") == std::string::npos) return s;
  }
  throw ConfigError("bundle artifact for '" + artifact["analysis"].get<std::string>() + "' lists no JSON file");
}

std::string head_words(const json& arr, std::size_t n) {
  std::vector<std::string> words;
  for (const auto& w : arr) {
    if (words.size() == n) break;
    words.push_back(w.is_object() ? w["word"].get<std::string>() : w.get<std::string>());
  }
  return words.empty() ? "-" : join(words, ", ");
}

std::string cell(const json& v) { return v.is_null() ? "-" : fmt_num(v.get<double>()); }

}  // namespace

std::string cmd_report(const fs::path& bundle_dir) {
  const json manifest = read_json(bundle_dir, "manifest.json");
  std::ostringstream os;
  os << "# Marked Personas report\n\n";
  try {
    os << "- corpus: " << manifest.at("corpus").get<std::string>() << " (" << manifest.at("personas").get<std::size_t>()
       << " personas)\n";
    os << "- models: " << join(manifest.at("models").get<std::vector<std::string>>(), ", ") << "\n";
    const auto& p = manifest.at("parameters");
    os << "- prior strength " << fmt_num(p.at("prior_strength").get<double>()) << ", z threshold "
       << fmt_num(p.at("z_threshold").get<double>()) << "\n";
    for (const auto& s : manifest.at("skipped")) {
      os << "- skipped " << s.at("analysis").get<std::string>() << ": " << s.at("reason").get<std::string>() << "\n";
    }

    for (const auto& a : manifest.at("artifacts")) {
      const std::string analysis = a.at("analysis").get<std::string>();
      const std::string model = a.at("model").get<std::string>();
      for (const auto& f : a.at("files")) {
        if (!fs::exists(bundle_dir / f.get<std::string>())) {
          throw ConfigError("bundle artifact missing: " + f.get<std::string>());
        }
      }
      const json j = read_json(bundle_dir, json_file(a));
      const std::string suffix = model.empty() ? "" : " (" + model + ")";
      if (analysis == "markedwords") {
        os << "\n## Marked words" << suffix << "\n\n| group | significant words |\n|---|---|\n";
        for (const auto& r : j.at("reports")) {
          os << "| " << r.at("group").get<std::string>() << " | " << head_words(r.at("significant"), 20) << " |\n";
        }
      } else if (analysis == "jsd") {
        os << "\n## JSD word shifts" << suffix << "\n\n| group | comparison | JSD | top words | Jaccard vs marked words |\n|---|---|---|---|---|\n";
        for (const auto& s : j.at("shifts")) {
          os << "| " << s.at("group").get<std::string>() << " | " << s.at("comparison").get<std::string>() << " | "
             << fmt_num(s.at("total_jsd").get<double>()) << " | " << head_words(s.at("ranked"), 10) << " | "
             << (s.contains("agreement") ? fmt_num(s["agreement"].at("jaccard").get<double>()) : "-") << " |\n";
        }
      } else if (analysis == "classify") {
        os << "\n## One-vs-all SVM" << suffix << "\n\n| task | accuracy (mean ± std) | seeds |\n|---|---|---|\n";
        for (const auto& t : j.at("tasks")) {
          os << "| " << t.at("task").get<std::string>() << " | " << fmt::format("{:.3f} ± {:.3f}", t.at("mean_accuracy").get<double>(), t.at("std_accuracy").get<double>())
             << " | " << t.at("seeds").size() << " |\n";
        }
        for (const auto& t : j.at("tasks")) {
          os << "\nTop features, " << t.at("task").get<std::string>() << ":\n\n| group | words |\n|---|---|\n";
          for (const auto& [g, words] : t.at("top_features").items()) os << "| " << g << " | " << head_words(words, 10) << " |\n";
        }
      } else if (analysis == "lexicons") {
        os << "\n## Stereotype lexicon rates" << suffix << "\n\n| source | group | lexicon | mean % | std err | n |\n|---|---|---|---|---|---|\n";
        for (const auto& r : j.at("rows")) {
          os << "| " << r.at("source").get<std::string>() << " | " << r.at("group").get<std::string>() << " | "
             << r.at("lexicon").get<std::string>() << " | " << cell(r.at("mean_pct")) << " | " << cell(r.at("std_err"))
             << " | " << r.at("n").get<std::size_t>() << " |\n";
        }
      } else if (analysis == "sentiment") {
        const auto& o = j.at("overall");
        os << "\n## Sentiment" << suffix << "\n\n- all personas: mean " << cell(o.at("mean")) << ", std " << cell(o.at("std"))
           << ", n " << o.at("n").get<std::size_t>() << "\n";
        if (j.contains("significant_words")) {
          const auto& w = j["significant_words"];
          os << "- significant words: mean " << cell(w.at("mean")) << ", std " << cell(w.at("std")) << ", negative: "
             << head_words(w.at("negatives"), 50) << "\n";
        }
        os << "\n| group | mean | std | n |\n|---|---|---|---|\n";
        for (const auto& g : j.at("groups")) {
          os << "| " << g.at("group").get<std::string>() << " | " << cell(g.at("mean")) << " | " << cell(g.at("std")) << " | "
             << g.at("n").get<std::size_t>() << " |\n";
        }
      } else if (analysis == "overlap") {
        os << "\n## Cross-model overlap\n\n| group | all models | single model |\n|---|---|---|\n";
        for (const auto& g : j.at("groups")) {
          std::vector<std::string> all, single;
          for (const auto& w : g.at("words")) {
            const auto tag = w.at("tag").get<std::string>();
            if (tag == "all-models") all.push_back(w.at("word").get<std::string>());
            if (tag == "single-model") single.push_back(w.at("word").get<std::string>());
          }
          os << "| " << g.at("group").get<std::string>() << " | " << head_words(all, 20) << " | " << head_words(single, 20) << " |\n";
        }
      } else if (analysis == "refusal") {
        os << "\n## Refusals\n\n| template | model | refused | n | % |\n|---|---|---|---|---|\n";
        for (const auto& r : j.at("rows")) {
          os << "| " << r.at("template").get<std::string>() << " | " << r.at("model").get<std::string>() << " | "
             << r.at("refused").get<std::size_t>() << " | " << r.at("n").get<std::size_t>() << " | " << cell(r.at("pct")) << " |\n";
        }
      } else {
        throw ConfigError("bundle lists unknown analysis '" + analysis + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed bundle: ") + e.what());
  }
  return os.str();
}

}  // namespace marked
