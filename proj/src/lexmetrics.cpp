#include "marked/lexmetrics.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <unordered_set>

#include "marked/error.hpp"
#include "marked/format.hpp"

namespace marked {

std::vector<std::string> StereotypeLexicon::words() const {
  std::vector<std::string> out;
  for (const auto& [w, c] : entries) out.push_back(w);
  return out;
}

StereotypeLexicon StereotypeLexicon::parse(std::istream& in, std::string name) {
  StereotypeLexicon lex;
  lex.name = std::move(name);
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string category;
    if (auto tab = line.find('\t'); tab != std::string::npos) {
      category = line.substr(tab + 1);
      line.erase(tab);
      while (!category.empty() && std::isspace(static_cast<unsigned char>(category.back()))) category.pop_back();
    }
    std::string w = normalize_entry(line);
    if (!w.empty()) lex.entries.emplace(std::move(w), std::move(category));
  }
  if (lex.entries.empty()) throw ConfigError("lexicon '" + lex.name + "' is empty");
  return lex;
}

StereotypeLexicon StereotypeLexicon::load(const std::filesystem::path& path, std::string name) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open lexicon " + path.filename().string());
  if (name.empty()) name = path.stem().string();
  return parse(in, std::move(name));
}

RateReport lexicon_rate(const PersonaCorpus& subset, const StereotypeLexicon& lex) {
  if (lex.entries.empty()) throw ConfigError("lexicon '" + lex.name + "' is empty");
  if (subset.empty()) throw AnalysisError("lexicon rate over an empty subset");
  std::vector<double> pct;
  pct.reserve(subset.size());
  for (const auto& p : subset.personas()) {
    const TokenList toks = normalize_text(p.text);
    if (toks.empty()) throw AnalysisError("persona '" + p.id + "' has no tokens");
    std::size_t hits = 0;
    for (const auto& t : toks) hits += lex.contains(t);
    pct.push_back(100.0 * static_cast<double>(hits) / static_cast<double>(toks.size()));
  }
  RateReport r;
  r.lexicon = lex.name;
  r.n = pct.size();
  double sum = 0.0;
  for (double v : pct) sum += v;
  r.mean_pct = sum / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double v : pct) ss += (v - r.mean_pct) * (v - r.mean_pct);
    r.std_err = std::sqrt(ss / static_cast<double>(r.n - 1)) / std::sqrt(static_cast<double>(r.n));
  }
  return r;
}

namespace {

std::vector<std::unordered_set<std::string>> token_sets(const PersonaCorpus& c) {
  std::vector<std::unordered_set<std::string>> out;
  out.reserve(c.size());
  for (const auto& p : c.personas()) {
    auto toks = normalize_text(p.text);
    out.emplace_back(toks.begin(), toks.end());
  }
  return out;
}

}  // namespace

PresenceReport word_presence_rates(const PersonaCorpus& subset, const std::vector<std::string>& words,
                                   const PersonaCorpus* reference) {
  if (subset.empty()) throw AnalysisError("word presence over an empty subset");
  const auto docs = token_sets(subset);
  const auto ref_docs = reference ? token_sets(*reference) : docs;
  auto occurs_in = [](const std::vector<std::unordered_set<std::string>>& ds, const std::string& w) {
    std::size_t n = 0;
    for (const auto& d : ds) n += d.count(w);
    return n;
  };
  auto pct = [&](std::size_t n) { return 100.0 * static_cast<double>(n) / static_cast<double>(docs.size()); };

  PresenceReport out;
  for (const auto& raw : words) {
    std::string w = normalize_entry(raw);
    if (w.empty()) continue;
    if (occurs_in(ref_docs, w) == 0) {
      out.other_words.push_back(w);
    } else {
      out.words.emplace_back(w, pct(occurs_in(docs, w)));
    }
  }
  std::size_t any = 0;
  for (const auto& d : docs) {
    for (const auto& w : out.other_words) {
      if (d.count(w)) {
        ++any;
        break;
      }
    }
  }
  out.other_words_pct = pct(any);
  return out;
}

std::vector<RateReport> compare_generated_vs_human(const PersonaCorpus& generated, const PersonaCorpus& human,
                                                   std::span<const StereotypeLexicon> lexicons,
                                                   std::span<const GroupSelector> groups) {
  if (generated.empty()) throw AnalysisError("generated corpus is empty");
  if (human.empty()) throw AnalysisError("human-written corpus is empty");
  for (const auto& p : generated.personas()) {
    if (p.source != Source::generated) throw ConfigError("persona '" + p.id + "' is not tagged source=generated");
  }
  for (const auto& p : human.personas()) {
    if (p.source != Source::human_written) {
      throw ConfigError("persona '" + p.id + "' is not tagged source=human_written");
    }
  }
  std::vector<RateReport> rows;
  for (const auto* c : {&generated, &human}) {
    for (const auto& g : groups) {
      PersonaCorpus sub = c->select(g);
      if (sub.empty()) {
        throw AnalysisError("no " + std::string(to_string(c == &generated ? Source::generated : Source::human_written)) +
                            " personas for group '" + g.label(c->schema()) + "'");
      }
      for (const auto& lex : lexicons) {
        RateReport r = lexicon_rate(sub, lex);
        r.source = to_string(c == &generated ? Source::generated : Source::human_written);
        r.group = g.label(c->schema());
        rows.push_back(std::move(r));
      }
    }
  }
  return rows;
}

void write_rates_tsv(std::ostream& os, std::span<const RateReport> rows) {
  os << "source\tgroup\tlexicon\tmean_pct\tstd_err\tn\n";
  for (const auto& r : rows) {
    os << r.source << '\t' << r.group << '\t' << r.lexicon << '\t' << fmt_num(r.mean_pct) << '\t'
       << fmt_num(r.std_err) << '\t' << r.n << '\n';
  }
}

nlohmann::json to_json(const RateReport& r) {
  return {{"source", r.source}, {"group", r.group},     {"lexicon", r.lexicon},
          {"mean_pct", r.mean_pct}, {"std_err", r.std_err}, {"n", r.n}};
}

}  // namespace marked
