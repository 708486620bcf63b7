#include "marked/markedwords.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "marked/error.hpp"
#include "marked/format.hpp"

namespace marked {

using nlohmann::json;

namespace {

void check_prior(const PriorConfig& prior) {
  if (!(prior.prior_strength > 0.0) || !std::isfinite(prior.prior_strength)) {
    throw ConfigError("prior strength must be positive");
  }
  if (prior.prior_counts.total() <= 0) throw AnalysisError("prior corpus is empty");
}

bool by_min_z(const SignificantWord& a, const SignificantWord& b) {
  if (a.min_z != b.min_z) return a.min_z > b.min_z;
  return a.word < b.word;
}

}  // namespace

double prior_alpha(const PriorConfig& prior, std::string_view word) {
  check_prior(prior);
  const auto& pc = prior.prior_counts;
  std::int64_t c = pc.count(word);
  if (c > 0) return prior.prior_strength * static_cast<double>(c) / static_cast<double>(pc.total());
  return prior.prior_strength / (static_cast<double>(pc.vocab_size()) * 10.0);
}

LogOddsResult weighted_log_odds(const CountTable& target, const CountTable& comparison,
                                const PriorConfig& prior) {
  if (target.total() <= 0) throw AnalysisError("weighted log-odds: empty target counts");
  if (comparison.total() <= 0) throw AnalysisError("weighted log-odds: empty comparison counts");
  check_prior(prior);

  std::set<std::string_view> vocab;
  for (const auto& [w, n] : target.counts()) vocab.insert(w);
  for (const auto& [w, n] : comparison.counts()) vocab.insert(w);

  std::vector<double> alpha;
  alpha.reserve(vocab.size());
  double alpha0 = prior.prior_strength;
  for (auto w : vocab) {
    double a = prior_alpha(prior, w);
    if (!(a > 0.0)) throw AnalysisError("non-positive prior pseudo-count for '" + std::string(w) + "'");
    if (prior.prior_counts.count(w) == 0) alpha0 += a;
    alpha.push_back(a);
  }

  const double n1 = static_cast<double>(target.total());
  const double n2 = static_cast<double>(comparison.total());
  LogOddsResult out;
  std::size_t i = 0;
  for (auto w : vocab) {
    const double a = alpha[i++];
    const double y1 = static_cast<double>(target.count(w));
    const double y2 = static_cast<double>(comparison.count(w));
    WordScore s;
    s.delta = std::log((y1 + a) / (n1 + alpha0 - y1 - a)) - std::log((y2 + a) / (n2 + alpha0 - y2 - a));
    s.variance = 1.0 / (y1 + a) + 1.0 / (y2 + a);
    s.z = s.delta / std::sqrt(s.variance);
    out.scores.emplace_hint(out.scores.end(), std::string(w), s);
  }
  return out;
}

std::vector<std::string> MarkedWordReport::significant_words() const {
  std::vector<std::string> out;
  out.reserve(significant.size());
  for (const auto& s : significant) out.push_back(s.word);
  return out;
}

bool MarkedWordReport::is_significant(std::string_view word) const {
  return std::any_of(significant.begin(), significant.end(), [&](const auto& s) { return s.word == word; });
}

MarkedWordReport marked_words(const PersonaCorpus& corpus, const GroupSelector& sel, const PriorConfig& prior) {
  const auto& schema = corpus.schema();
  MarkedWordReport report;
  report.group = sel;
  report.label = sel.label(schema);
  auto models = corpus.models();
  if (models.size() == 1) report.model = models.front();

  const CountTable target = partition(corpus, sel);
  const auto comparisons = sel.unmarked_comparisons(schema);
  for (const auto& cmp : comparisons) {
    CountTable other;
    try {
      other = partition(corpus, cmp);
    } catch (const AnalysisError&) {
      throw AnalysisError("no unmarked comparison partition '" + cmp.label(schema) + "' for group '" +
                          report.label + "'");
    }
    report.per_comparison.push_back({cmp, cmp.label(schema), weighted_log_odds(target, other, prior)});
  }

  for (const auto& [word, n] : target.counts()) {
    if (n < prior.min_count) continue;
    double min_z = std::numeric_limits<double>::infinity();
    bool ok = true;
    for (const auto& c : report.per_comparison) {
      const WordScore* s = c.result.find(word);
      if (!s || !(s->z > prior.z_threshold)) {
        ok = false;
        break;
      }
      min_z = std::min(min_z, s->z);
    }
    if (ok) report.significant.push_back({word, min_z});
  }
  std::sort(report.significant.begin(), report.significant.end(), by_min_z);
  return report;
}

MarkedWordReport marked_words(const PersonaCorpus& corpus, const GroupSelector& sel, double prior_strength,
                              double z_threshold) {
  PriorConfig prior;
  prior.prior_counts = corpus.counts();
  prior.prior_strength = prior_strength;
  prior.z_threshold = z_threshold;
  return marked_words(corpus, sel, prior);
}

// ---------------------------------------------------------------------------

std::string_view to_string(OverlapTag t) {
  switch (t) {
    case OverlapTag::all_models: return "all-models";
    case OverlapTag::partial: return "partial";
    case OverlapTag::single_model: return "single-model";
  }
  return "";
}

std::vector<std::string> ModelOverlap::tagged(OverlapTag t) const {
  std::vector<std::string> out;
  for (const auto& w : words) {
    if (w.tag == t) out.push_back(w.word);
  }
  return out;
}

ModelOverlap cross_model_overlap(std::span<const MarkedWordReport> reports) {
  if (reports.size() < 2) throw AnalysisError("cross-model overlap needs at least two reports");
  for (const auto& r : reports) {
    if (r.group != reports.front().group) {
      throw AnalysisError("cross-model overlap: mismatched groups '" + r.label + "' and '" +
                          reports.front().label + "'");
    }
  }
  std::map<std::string, OverlapWord> acc;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    std::string model = r.model.empty() ? "report" + std::to_string(i) : r.model;
    for (const auto& s : r.significant) {
      auto [it, fresh] = acc.try_emplace(s.word);
      OverlapWord& w = it->second;
      if (fresh) {
        w.word = s.word;
        w.best_z = s.min_z;
      }
      w.models.push_back(model);
      w.best_z = std::max(w.best_z, s.min_z);
    }
  }
  ModelOverlap out;
  out.group = reports.front().group;
  out.label = reports.front().label;
  for (auto& [word, w] : acc) {
    if (w.models.size() == reports.size()) {
      w.tag = OverlapTag::all_models;
    } else if (w.models.size() == 1) {
      w.tag = OverlapTag::single_model;
    } else {
      w.tag = OverlapTag::partial;
    }
    out.words.push_back(std::move(w));
  }
  std::sort(out.words.begin(), out.words.end(), [](const OverlapWord& a, const OverlapWord& b) {
    if (a.models.size() != b.models.size()) return a.models.size() > b.models.size();
    if (a.best_z != b.best_z) return a.best_z > b.best_z;
    return a.word < b.word;
  });
  return out;
}

// ---------------------------------------------------------------------------

void write_markedwords_tsv(std::ostream& os, std::span<const MarkedWordReport> reports) {
  os << "group\tcomparison\tword\tdelta\tvariance\tz\n";
  for (const auto& r : reports) {
    for (const auto& c : r.per_comparison) {
      for (const auto& [w, s] : c.result.scores) {
        os << r.label << '\t' << c.label << '\t' << w << '\t' << fmt_num(s.delta) << '\t' << fmt_num(s.variance)
           << '\t' << fmt_num(s.z) << '\n';
      }
    }
  }
}

json to_json(const MarkedWordReport& r) {
  json sig = json::array();
  for (const auto& s : r.significant) sig.push_back({{"word", s.word}, {"min_z", s.min_z}});
  json cmps = json::array();
  for (const auto& c : r.per_comparison) {
    json words = json::object();
    for (const auto& s : r.significant) {
      if (const WordScore* ws = c.result.find(s.word)) {
        words[s.word] = {{"delta", ws->delta}, {"variance", ws->variance}, {"z", ws->z}};
      }
    }
    cmps.push_back({{"comparison", c.label}, {"selector", c.group.constraints()}, {"significant_scores", words}});
  }
  return {{"group", r.label},
          {"selector", r.group.constraints()},
          {"model", r.model},
          {"comparisons", cmps},
          {"significant", sig}};
}

json to_json(const ModelOverlap& o) {
  json words = json::array();
  for (const auto& w : o.words) {
    words.push_back({{"word", w.word}, {"tag", to_string(w.tag)}, {"models", w.models}, {"best_z", w.best_z}});
  }
  return {{"group", o.label}, {"words", words}};
}

}  // namespace marked
