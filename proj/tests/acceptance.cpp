// Acceptance suite: one PASS/FAIL line per criterion. Checks that need the
// released persona dataset run only when MARKED_RELEASED_DATASET points to it
// (JSONL corpus); the sentiment means also need MARKED_VALENCE_LEXICON.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include <fmt/format.h>

#include "marked/classify.hpp"
#include "marked/genclient.hpp"
#include "marked/jsdshift.hpp"
#include "marked/lexmetrics.hpp"
#include "marked/markedwords.hpp"
#include "marked/pipeline.hpp"
#include "marked/sentiment.hpp"
#include "oracles/jsd_oracle.hpp"
#include "oracles/logodds_oracle.hpp"
#include "support/fixtures.hpp"
#include "support/mock_server.hpp"

using namespace marked;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

// ---------------------------------------------------------------------------

Outcome logodds_oracle() {
  Outcome o;
  const auto start = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20230601);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t vocab = 1 + rng() % 20;
    auto table = [&] {
      CountTable t;
      const std::size_t docs = 1 + rng() % 50;
      for (std::size_t d = 0; d < docs; ++d) {
        const std::string w = "v" + std::to_string(rng() % vocab);
        t.add(w, static_cast<std::int64_t>(1 + rng() % 30));
      }
      return t;
    };
    CountTable target = table(), comparison = table();
    CountTable prior_table;
    if (trial % 2 == 0) {
      prior_table = target;
      prior_table += comparison;
    } else {
      prior_table = table();  // leaves some words to the smoothing rule
    }
    PriorConfig prior;
    prior.prior_counts = prior_table;
    prior.prior_strength = trial % 3 == 0 ? 500.0 : 1.0 + static_cast<double>(rng() % 2000);

    auto plain = [](const CountTable& t) {
      oracle::Counts c;
      for (const auto& [w, n] : t.counts()) c[w] = n;
      return c;
    };
    const auto got = weighted_log_odds(target, comparison, prior);
    const auto want = oracle::weighted_log_odds(plain(target), plain(comparison), plain(prior_table),
                                                prior.prior_strength);
    o.require(got.scores.size() == want.size(), "vocabulary size differs from oracle");
    for (const auto& [w, s] : want) {
      const WordScore* g = got.find(w);
      o.require(g != nullptr, "word missing: " + w);
      if (!g) continue;
      worst = std::max({worst, std::abs(g->delta - s.delta), std::abs(g->variance - s.variance), std::abs(g->z - s.z)});
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  o.require(worst <= 1e-9, fmt::format("max abs difference {:.3g} > 1e-9", worst));
  o.require(secs < 5.0, fmt::format("took {:.2f}s", secs));
  if (o.ok) o.detail = fmt::format("100 corpora, max abs diff {:.2g}, {:.3f}s", worst, secs);
  return o;
}

Outcome planted_signal() {
  Outcome o;
  auto corpus = fixtures::planted_corpus();
  std::map<std::string, MarkedWordReport> reports;
  for (const std::string g : {"a", "b"}) reports[g] = marked_words(corpus, GroupSelector{{"group", g}}, 500.0, 1.96);
  for (const auto& [g, rep] : reports) {
    const std::string token = "planted" + g;
    auto it = std::find_if(rep.significant.begin(), rep.significant.end(), [&](auto& s) { return s.word == token; });
    o.require(it != rep.significant.end() && it->min_z > 1.96, token + " not significant for its group");
    for (const auto& [other, orep] : reports) {
      if (other != g) o.require(!orep.is_significant(token), token + " significant for group " + other);
    }
    o.require(!rep.is_significant("common"), "uniform token significant for group " + g);
  }
  if (o.ok) {
    o.detail = fmt::format("z(planteda)={:.2f}, z(plantedb)={:.2f}", reports["a"].significant.front().min_z,
                           reports["b"].significant.front().min_z);
  }
  return o;
}

Outcome intersection_rule() {
  Outcome o;
  auto corpus = fixtures::intersection_corpus();
  auto rep = marked_words(corpus, GroupSelector{{"race", "B"}, {"gender", "f"}}, 500.0, 1.96);
  const double z_race = rep.per_comparison.at(0).result.scores.at("raceonly").z;
  const double z_gender = rep.per_comparison.at(1).result.scores.at("raceonly").z;
  o.require(z_race > 1.96, "raceonly not elevated against the unmarked race");
  o.require(std::abs(z_gender) < 1.96, "raceonly not balanced against the unmarked gender");
  o.require(!rep.is_significant("raceonly"), "raceonly kept in the intersectional set");
  o.require(rep.is_significant("both"), "control token elevated on both axes was dropped");
  if (o.ok) o.detail = fmt::format("raceonly z = {:.2f} vs W, {:.2f} vs m; excluded", z_race, z_gender);
  return o;
}

Outcome jsd_decomposition() {
  Outcome o;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Distribution p, q;
    const int vocab = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < vocab; ++i) {
      if (u(rng) < 0.6) p["w" + std::to_string(i)] = u(rng) + 1e-4;
      if (u(rng) < 0.6) q["w" + std::to_string(i)] = u(rng) + 1e-4;
    }
    if (p.empty()) p["w0"] = 1.0;
    if (q.empty()) q["w0"] = 1.0;
    auto r = jsd_word_shift(p, q);
    double sum = 0.0;
    for (const auto& w : r.words) sum += std::abs(w.contribution);
    const double h = oracle::jsd_entropy_form({p.begin(), p.end()}, {q.begin(), q.end()});
    worst = std::max(worst, std::abs(sum - h));
  }
  o.require(worst <= 1e-9, fmt::format("max |sum - entropy form| = {:.3g}", worst));
  Distribution same{{"a", 0.3}, {"b", 0.7}};
  const double zero = jsd_word_shift(same, same).total_jsd;
  o.require(std::abs(zero) <= 1e-12, fmt::format("identical inputs give {:.3g}", zero));
  const double one = jsd_word_shift(Distribution{{"a", 1.0}}, Distribution{{"b", 1.0}}).total_jsd;
  o.require(std::abs(one - 1.0) <= 1e-12, fmt::format("disjoint supports give {:.17g}", one));
  if (o.ok) o.detail = fmt::format("100 pairs, max diff {:.2g}; identical 0, disjoint 1", worst);
  return o;
}

std::vector<Document> persona_documents(const PersonaCorpus& c) {
  std::vector<std::string> axes;
  for (const auto& a : c.schema().axes()) axes.push_back(a.name);
  std::vector<WordSet> stop{default_pronouns(), default_identity_descriptors()};
  return make_documents(c, axes, stop);
}

Outcome classifier_separability() {
  Outcome o;
  const std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  auto docs = persona_documents(fixtures::separable_corpus(90));
  auto sweep = evaluate_seeds(docs, 0.2, {}, seeds);
  for (double a : sweep.accuracies) o.require(a == 1.0, fmt::format("separable accuracy {:.4f}", a));
  const auto schema = AxisSchema::default_schema();
  const auto groups = schema.full_groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto top = top_features(sweep.first_model, groups[g].label(schema), 3);
    const std::string marker = "mk" + std::to_string(g);
    o.require(std::find(top.begin(), top.end(), marker) != top.end(), marker + " not in the top 3");
  }

  std::mt19937_64 rng(12345);
  std::vector<std::string> labels;
  for (const auto& d : docs) labels.push_back(d.label);
  for (std::size_t i = labels.size(); i > 1; --i) std::swap(labels[i - 1], labels[rng() % i]);
  auto shuffled = docs;
  for (std::size_t i = 0; i < docs.size(); ++i) shuffled[i].label = labels[i];
  auto chance = evaluate_seeds(shuffled, 0.2, {}, seeds);
  o.require(std::abs(chance.mean - 1.0 / 15.0) <= 0.1, fmt::format("shuffled-label accuracy {:.4f}", chance.mean));
  std::string detail = fmt::format("separable acc 1.0 x5, markers top-3, shuffled {:.3f}", chance.mean);

  if (auto path = env("MARKED_RELEASED_DATASET")) {
    auto corpus = load_personas(*path).filter([](const Persona& p) { return !p.refusal; });
    for (const auto& [prefix, expected] : std::vector<std::pair<std::string, double>>{{"gpt-4", 0.96}, {"gpt-3.5", 0.92}}) {
      auto sub = corpus.filter([&](const Persona& p) { return p.model.rfind(prefix, 0) == 0; });
      o.require(!sub.empty(), "released dataset has no " + prefix + " personas");
      if (sub.empty()) continue;
      auto s = evaluate_seeds(persona_documents(sub), 0.2, {}, seeds);
      o.require(std::abs(s.mean - expected) <= 0.05,
                fmt::format("{} accuracy {:.3f} outside {:.2f} +/- 0.05", prefix, s.mean, expected));
      detail += fmt::format("; {} {:.3f}+/-{:.3f}", prefix, s.mean, s.stddev);
    }
  } else {
    detail += "; released-dataset check SKIPPED (MARKED_RELEASED_DATASET unset)";
  }
  if (o.ok) o.detail = detail;
  return o;
}

Outcome lexicon_rates() {
  Outcome o;
  auto schema = AxisSchema::default_schema();
  auto mk = [&](std::vector<std::string> texts, Source src) {
    std::vector<Persona> ps;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      auto p = fixtures::persona(std::to_string(static_cast<int>(src)) + "-" + std::to_string(i), texts[i],
                                 {{"race_ethnicity", "Black"}, {"gender", "woman"}});
      p.source = src;
      ps.push_back(p);
    }
    return PersonaCorpus(schema, ps);
  };
  std::istringstream lex_src("tall\nathletic\n");
  auto lex = StereotypeLexicon::parse(lex_src, "fixture");
  // Per-persona rates 200/3, 25, 0, 100.
  auto r = lexicon_rate(mk({"tall athletic calm", "tall calm calm calm", "calm quiet", "athletic"}, Source::generated),
                        lex);
  const double mean = 575.0 / 12.0;
  const double se = std::sqrt(847500.0 / 432.0) / 2.0;
  o.require(std::abs(r.mean_pct - mean) < 1e-12, fmt::format("mean_pct {:.17g}", r.mean_pct));
  o.require(std::abs(r.std_err - se) < 1e-12, fmt::format("std_err {:.17g}", r.std_err));

  // Lexicon words that never occur in the generated personas are pooled.
  auto gen = mk({"strong proud", "strong"}, Source::generated);
  auto human = mk({"brave strong", "brave", "bold", "quiet"}, Source::human_written);
  auto pr = word_presence_rates(human, {"strong", "brave", "bold"}, &gen);
  o.require(pr.words.size() == 1 && pr.words[0].first == "strong" && pr.words[0].second == 25.0,
            "per-word presence of shared words");
  o.require(pr.other_words == std::vector<std::string>{"brave", "bold"}, "bucketed words");
  o.require(pr.other_words_pct == 75.0, fmt::format("other words {:.4g}%", pr.other_words_pct));
  if (o.ok) o.detail = fmt::format("mean {:.6f}%, se {:.6f}, other words 75%", r.mean_pct, r.std_err);
  return o;
}

Outcome sentiment_bounds() {
  Outcome o;
  auto lex = SentimentLexicon::load(MARKED_DATA_DIR "/sentiment_demo.tsv");
  auto neg = lex.negated();
  std::vector<std::string> pool{"the", "a", "person", "neutral"};
  for (const auto& [w, v] : lex.valence) pool.push_back(w);
  for (const auto& [w, v] : lex.boosters) pool.push_back(w);
  for (const auto& w : lex.negations) pool.push_back(w);
  std::sort(pool.begin(), pool.end());
  std::mt19937_64 rng(4242);
  for (int i = 0; i < 5000; ++i) {
    TokenList toks;
    const std::size_t n = rng() % 80;
    for (std::size_t k = 0; k < n; ++k) toks.push_back(pool[rng() % pool.size()]);
    const double c = compound_score(toks, lex).compound;
    o.require(c >= -1.0 && c <= 1.0, fmt::format("compound {} out of range", c));
    o.require(compound_score(toks, neg).compound == -c, "negated lexicon is not exactly antisymmetric");
  }
  o.require(compound_score("the person walked to the office", lex).compound == 0.0, "neutral text is not 0");
  std::string detail = "5000 fuzzed inputs in [-1,1], exact antisymmetry, neutral 0";

  auto ds = env("MARKED_RELEASED_DATASET");
  auto vl = env("MARKED_VALENCE_LEXICON");
  if (ds && vl) {
    auto ref = SentimentLexicon::load(*vl);
    auto corpus = load_personas(*ds).filter([](const Persona& p) { return !p.refusal; });
    for (const auto& [prefix, expected] : std::vector<std::pair<std::string, double>>{{"gpt-4", 0.83}, {"gpt-3.5", 0.93}}) {
      auto sub = corpus.filter([&](const Persona& p) { return p.model.rfind(prefix, 0) == 0; });
      o.require(!sub.empty(), "released dataset has no " + prefix + " personas");
      if (sub.empty()) continue;
      auto st = corpus_sentiment(sub, ref);
      o.require(std::abs(st.mean - expected) <= 0.05,
                fmt::format("{} mean sentiment {:.3f} outside {:.2f} +/- 0.05", prefix, st.mean, expected));
      detail += fmt::format("; {} mean {:.3f}", prefix, st.mean);
    }
  } else {
    detail += "; dataset means SKIPPED (need MARKED_RELEASED_DATASET and MARKED_VALENCE_LEXICON; lexicon-dependent)";
  }
  if (o.ok) o.detail = detail;
  return o;
}

Outcome generation_client() {
  Outcome o;
  const auto schema = AxisSchema::default_schema();
  auto tpls = select_templates("persona_5,persona_6");
  auto jobs = render_grid(schema, tpls, 2, {"mock-model", 1.0, 64});
  auto endpoint = [](const fixtures::MockServer& s, int conc) {
    EndpointConfig e;
    e.base_url = s.base_url();
    e.api_key_env_var = "MARKED_ACCEPTANCE_UNSET_KEY";
    e.max_concurrency = conc;
    e.max_retries = 2;
    e.backoff.initial = std::chrono::milliseconds(2);
    e.backoff.max = std::chrono::milliseconds(10);
    return e;
  };

  {
    fixtures::TempDir dir;
    fixtures::MockServer server(fixtures::MockServer::echo, std::chrono::milliseconds(5));
    auto r1 = run_jobs(jobs, endpoint(server, 3), schema, dir / "c.jsonl", dir / "f.jsonl");
    const auto bytes = fixtures::slurp(dir / "c.jsonl");
    auto r2 = run_jobs(jobs, endpoint(server, 3), schema, dir / "c.jsonl", dir / "f.jsonl");
    o.require(r1.stats.completed == jobs.size(), "first run incomplete");
    o.require(r2.stats.requests == 0, fmt::format("second run made {} requests", r2.stats.requests));
    o.require(fixtures::slurp(dir / "c.jsonl") == bytes, "cache changed on the second run");
    o.require(server.peak_in_flight() <= 3, fmt::format("peak concurrency {} > 3", server.peak_in_flight()));
  }
  {
    fixtures::TempDir dir;
    std::atomic<int> calls{0};
    fixtures::MockServer server([&](const nlohmann::json& req, httplib::Response& res) {
      if (calls++ < 2) {
        res.status = 429;
      } else {
        fixtures::MockServer::echo(req, res);
      }
    });
    std::vector<GenerationJob> one{jobs.front()};
    auto r = run_jobs(one, endpoint(server, 1), schema, dir / "c.jsonl", dir / "f.jsonl");
    o.require(r.stats.completed == 1 && r.stats.requests == 3, "429, 429, 200 did not succeed on the third attempt");
  }
  {
    fixtures::TempDir dir;
    fixtures::MockServer server([](const nlohmann::json&, httplib::Response& res) { res.status = 500; });
    std::vector<GenerationJob> two{jobs[0], jobs[1]};
    auto r = run_jobs(two, endpoint(server, 2), schema, dir / "c.jsonl", dir / "f.jsonl");
    const auto failures = fixtures::slurp(dir / "f.jsonl");
    o.require(r.stats.failed == 2, "persistent 500s not counted as failures");
    o.require(failures.find(jobs[0].key()) != std::string::npos && failures.find(jobs[1].key()) != std::string::npos,
              "failures file incomplete");
  }
  {
    std::vector<Persona> ps;
    for (int i = 0; i < 100; ++i) {
      ps.push_back(fixtures::persona(std::to_string(i), i < 77 ? "As an AI language model, I cannot." : "A teacher.",
                                     {{"gender", "woman"}}, "mock-model", "sentiment_dislike"));
    }
    std::vector<std::string> markers{"language model"};
    auto rows = refusal_scan(PersonaCorpus(schema, ps), markers);
    o.require(rows.size() == 1 && rows[0].pct == 77.0, "refusal scan did not report 77%");
  }
  if (o.ok) o.detail = "cache rerun 0 requests + identical bytes, 429x2->200, concurrency <= 3, 500s -> failures, 77%";
  return o;
}

Outcome end_to_end_determinism() {
  Outcome o;
  fixtures::TempDir dir;
  write_personas(dir / "corpus.jsonl", fixtures::pipeline_corpus());
  auto run = [&](const std::string& out) {
    RunConfig cfg;
    cfg.corpus = dir / "corpus.jsonl";
    cfg.out = dir / out;
    cfg.lexicons = {{"demo", MARKED_DATA_DIR "/lexicons/demo_stereotypes.txt"}};
    cfg.sentiment_lexicon = MARKED_DATA_DIR "/sentiment_demo.tsv";
    cfg.seeds = {0, 1, 2};
    std::ostringstream log;
    cmd_analyze(cfg, log);
    std::map<std::string, std::string> files;
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir / out)) {
      if (e.is_regular_file()) {
        files[std::filesystem::relative(e.path(), dir / out).generic_string()] = fixtures::slurp(e.path());
      }
    }
    return files;
  };
  auto a = run("a");
  auto b = run("b");
  o.require(a.size() > 10, fmt::format("bundle has only {} files", a.size()));
  o.require(a == b, "bundles differ");
  o.require(cmd_report(dir / "a") == cmd_report(dir / "b"), "reports differ");
  if (o.ok) o.detail = fmt::format("{} files byte-identical across runs", a.size());
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"1 log-odds oracle equivalence", logodds_oracle},
      {"2 planted-signal detection", planted_signal},
      {"3 intersection rule", intersection_rule},
      {"4 JSD decomposition", jsd_decomposition},
      {"5 classifier separability", classifier_separability},
      {"6 lexicon rates", lexicon_rates},
      {"7 sentiment bounds", sentiment_bounds},
      {"8 generation client", generation_client},
      {"9 end-to-end determinism", end_to_end_determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.ok = false;
      o.detail = std::string("exception: ") + e.what();
    }
    failed += !o.ok;
    std::cout << (o.ok ? "PASS " : "FAIL ") << name << " -- " << o.detail << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
