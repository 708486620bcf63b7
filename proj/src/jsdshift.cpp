#include "marked/jsdshift.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "marked/error.hpp"
#include "marked/format.hpp"

namespace marked {

using nlohmann::json;

namespace {

Distribution normalized(const Distribution& d, const char* which) {
  double sum = 0.0;
  for (const auto& [w, v] : d) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw AnalysisError(std::string("JSD: invalid mass in ") + which);
    sum += v;
  }
  if (!(sum > 0.0)) throw AnalysisError(std::string("JSD: empty ") + which + " distribution");
  Distribution out;
  for (const auto& [w, v] : d) out.emplace_hint(out.end(), w, v / sum);
  return out;
}

// x * log2(x / m), with 0 * log(0 / m) = 0.
double term(double x, double m) { return x > 0.0 ? x * std::log2(x / m) : 0.0; }

Distribution relative(const CountTable& t, const char* which) {
  if (t.total() <= 0) throw AnalysisError(std::string("JSD: empty ") + which + " table");
  Distribution d;
  for (const auto& [w, n] : t.counts()) d.emplace_hint(d.end(), w, static_cast<double>(n));
  return d;
}

}  // namespace

std::vector<std::string> JsdShiftResult::ranked_words() const {
  std::vector<std::string> out;
  for (const auto& r : ranked) out.push_back(r.word);
  return out;
}

JsdShiftResult jsd_word_shift(const Distribution& p_in, const Distribution& q_in, std::size_t k) {
  if (k < 1) throw AnalysisError("JSD: k must be at least 1");
  const Distribution p = normalized(p_in, "target");
  const Distribution q = normalized(q_in, "comparison");

  std::set<std::string_view> vocab;
  for (const auto& [w, v] : p) vocab.insert(w);
  for (const auto& [w, v] : q) vocab.insert(w);

  JsdShiftResult out;
  out.words.reserve(vocab.size());
  for (auto w : vocab) {
    auto pi = p.find(w);
    auto qi = q.find(w);
    const double pw = pi == p.end() ? 0.0 : pi->second;
    const double qw = qi == q.end() ? 0.0 : qi->second;
    const double m = 0.5 * (pw + qw);
    const double mag = m > 0.0 ? 0.5 * term(pw, m) + 0.5 * term(qw, m) : 0.0;
    out.words.push_back({std::string(w), pw > qw ? mag : -mag, pw, qw});
    out.total_jsd += mag;
  }
  out.ranked = out.words;
  std::stable_sort(out.ranked.begin(), out.ranked.end(), [](const WordShift& a, const WordShift& b) {
    return std::abs(a.contribution) > std::abs(b.contribution);
  });
  if (out.ranked.size() > k) out.ranked.resize(k);
  return out;
}

JsdShiftResult jsd_word_shift(const CountTable& target, const CountTable& comparison, std::size_t k) {
  return jsd_word_shift(relative(target, "target"), relative(comparison, "comparison"), k);
}

Agreement set_agreement(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::set<std::string> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::vector<std::string> inter;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  const std::size_t uni = sa.size() + sb.size() - inter.size();
  return {inter.size(), uni == 0 ? 0.0 : static_cast<double>(inter.size()) / static_cast<double>(uni)};
}

Agreement jsd_agreement(const MarkedWordReport& report, const JsdShiftResult& shift) {
  if (!shift.target_label.empty() && !report.label.empty() && shift.target_label != report.label) {
    throw AnalysisError("JSD agreement: shift for '" + shift.target_label + "' compared with report for '" +
                        report.label + "'");
  }
  return set_agreement(shift.ranked_words(), report.significant_words());
}

void write_jsd_tsv(std::ostream& os, const std::vector<JsdShiftResult>& shifts) {
  os << "group\tcomparison\trank\tword\tcontribution\n";
  for (const auto& s : shifts) {
    for (std::size_t i = 0; i < s.ranked.size(); ++i) {
      os << s.target_label << '\t' << s.comparison_label << '\t' << i + 1 << '\t' << s.ranked[i].word << '\t'
         << fmt_num(s.ranked[i].contribution) << '\n';
    }
  }
}

json to_json(const JsdShiftResult& r) {
  json ranked = json::array();
  for (std::size_t i = 0; i < r.ranked.size(); ++i) {
    ranked.push_back({{"rank", i + 1}, {"word", r.ranked[i].word}, {"contribution", r.ranked[i].contribution}});
  }
  return {{"group", r.target_label}, {"comparison", r.comparison_label}, {"total_jsd", r.total_jsd}, {"ranked", ranked}};
}

}  // namespace marked
