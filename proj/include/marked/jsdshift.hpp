#pragma once

// Jensen-Shannon divergence word shifts between two word distributions.

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "marked/corpus.hpp"
#include "marked/markedwords.hpp"

namespace marked {

/// word -> probability; entries need not be normalized on input.
using Distribution = std::map<std::string, double, std::less<>>;

struct WordShift {
  std::string word;
  /// Positive when the word is over-represented in the target.
  double contribution = 0.0;
  double p = 0.0;
  double q = 0.0;
};

struct JsdShiftResult {
  std::string target_label;
  std::string comparison_label;
  /// Base-2 JSD, in [0, 1].
  double total_jsd = 0.0;
  /// Every word of the union vocabulary, lexicographic.
  std::vector<WordShift> words;
  /// Top-k by |contribution|, ties lexicographic.
  std::vector<WordShift> ranked;

  std::vector<std::string> ranked_words() const;
};

/// Equal mixture weights, log base 2. Only the two compared texts enter the
/// computation; there is no external prior.
JsdShiftResult jsd_word_shift(const CountTable& target, const CountTable& comparison, std::size_t k = 10);
JsdShiftResult jsd_word_shift(const Distribution& p, const Distribution& q, std::size_t k = 10);

struct Agreement {
  std::size_t overlap = 0;
  double jaccard = 0.0;
};

/// Overlap of the top-k shift words with the report's significant words.
Agreement jsd_agreement(const MarkedWordReport& report, const JsdShiftResult& shift);
Agreement set_agreement(const std::vector<std::string>& a, const std::vector<std::string>& b);

void write_jsd_tsv(std::ostream& os, const std::vector<JsdShiftResult>& shifts);
nlohmann::json to_json(const JsdShiftResult& r);

}  // namespace marked
