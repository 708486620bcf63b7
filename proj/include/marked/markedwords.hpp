#pragma once

// Weighted log-odds ratios with an informative Dirichlet prior, and the
// intersection of significant words across unmarked comparison groups.

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "marked/corpus.hpp"

namespace marked {

struct PriorConfig {
  /// Background counts; alpha_w is proportional to prior_counts[w].
  CountTable prior_counts;
  /// Sum of the pseudo-counts over the prior vocabulary (alpha_0).
  double prior_strength = 500.0;
  double z_threshold = 1.96;
  /// Words with fewer occurrences in the target partition never count as significant.
  std::int64_t min_count = 0;
};

struct WordScore {
  double delta = 0.0;
  double variance = 0.0;
  double z = 0.0;
};

struct LogOddsResult {
  std::map<std::string, WordScore, std::less<>> scores;

  const WordScore* find(std::string_view word) const {
    auto it = scores.find(word);
    return it == scores.end() ? nullptr : &it->second;
  }
};

/// Pseudo-count for a word: prior_strength * prior[w] / prior.total, or
/// prior_strength / (10 * prior vocabulary size) for words the prior never saw.
double prior_alpha(const PriorConfig& prior, std::string_view word);

/// Scores every word of the union vocabulary of target and comparison.
///   delta = log((y1+a)/(n1+a0-y1-a)) - log((y2+a)/(n2+a0-y2-a))
///   variance = 1/(y1+a) + 1/(y2+a),  z = delta / sqrt(variance)
/// where a0 sums the pseudo-counts over the prior vocabulary plus the
/// smoothed words of the union vocabulary.
LogOddsResult weighted_log_odds(const CountTable& target, const CountTable& comparison,
                                const PriorConfig& prior);

struct SignificantWord {
  std::string word;
  double min_z = 0.0;
};

struct ComparisonResult {
  GroupSelector group;
  std::string label;
  LogOddsResult result;
};

struct MarkedWordReport {
  GroupSelector group;
  std::string label;
  std::string model;
  std::vector<ComparisonResult> per_comparison;
  /// Words above the threshold against every comparison, descending by
  /// minimum z, ties broken lexicographically.
  std::vector<SignificantWord> significant;

  std::vector<std::string> significant_words() const;
  bool is_significant(std::string_view word) const;
};

/// Compares the selector's partition against each of its unmarked comparison
/// partitions, all scored with the same prior.
MarkedWordReport marked_words(const PersonaCorpus& corpus, const GroupSelector& sel,
                              const PriorConfig& prior);

/// Same, with the whole corpus as the prior.
MarkedWordReport marked_words(const PersonaCorpus& corpus, const GroupSelector& sel,
                              double prior_strength = 500.0, double z_threshold = 1.96);

enum class OverlapTag { all_models, partial, single_model };
std::string_view to_string(OverlapTag t);

struct OverlapWord {
  std::string word;
  OverlapTag tag = OverlapTag::single_model;
  std::vector<std::string> models;
  /// Highest minimum-z across the reports containing the word.
  double best_z = 0.0;
};

struct ModelOverlap {
  GroupSelector group;
  std::string label;
  /// Words in every report first, then fewer reports; by best_z within a tier.
  std::vector<OverlapWord> words;

  std::vector<std::string> tagged(OverlapTag t) const;
};

ModelOverlap cross_model_overlap(std::span<const MarkedWordReport> reports);

/// All scored words: group, comparison, word, delta, variance, z.
void write_markedwords_tsv(std::ostream& os, std::span<const MarkedWordReport> reports);
nlohmann::json to_json(const MarkedWordReport& r);
nlohmann::json to_json(const ModelOverlap& o);

}  // namespace marked
