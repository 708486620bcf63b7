#pragma once

// Lexicon sentiment with negation and booster rules, normalized to [-1, 1].

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "marked/corpus.hpp"

namespace marked {

struct SentimentLexicon {
  std::unordered_map<std::string, double> valence;
  std::unordered_map<std::string, double> boosters;
  WordSet negations;

  /// Valences from a TSV whose first two columns are token and mean valence
  /// (extra columns ignored), plus the built-in booster and negation lists.
  static SentimentLexicon parse(std::istream& in);
  static SentimentLexicon load(const std::filesystem::path& path);
  static SentimentLexicon with_default_rules(std::unordered_map<std::string, double> valence);

  /// Copy with every valence negated; rule lists unchanged.
  SentimentLexicon negated() const;
};

std::unordered_map<std::string, double> default_boosters();
WordSet default_negations();

inline constexpr double kNegationScalar = -0.74;
inline constexpr double kNormalizationAlpha = 15.0;

struct SentimentScore {
  double compound = 0.0;
  /// Rule-adjusted valence sum before normalization.
  double sum = 0.0;
};

/// Each valenced token contributes its valence, pushed away from zero by an
/// immediately preceding booster, then multiplied by -0.74 when a negation
/// occurs in the three preceding tokens. compound = S / sqrt(S^2 + 15).
SentimentScore compound_score(std::string_view text, const SentimentLexicon& lex);
SentimentScore compound_score(const TokenList& tokens, const SentimentLexicon& lex);

struct SentimentStats {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

SentimentStats corpus_sentiment(const PersonaCorpus& subset, const SentimentLexicon& lex);

struct WordSentiment {
  std::vector<std::pair<std::string, double>> scores;
  /// Unset for an empty word list.
  std::optional<double> mean;
  double stddev = 0.0;
  std::vector<std::string> negatives;
};

WordSentiment word_sentiment(const std::vector<std::string>& words, const SentimentLexicon& lex);

}  // namespace marked
