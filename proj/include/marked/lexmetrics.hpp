#pragma once

// Stereotype-lexicon rates, per-word presence rates and word tracking.

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "marked/corpus.hpp"

namespace marked {

struct StereotypeLexicon {
  std::string name;
  /// normalized word -> category ("" when uncategorized)
  std::map<std::string, std::string, std::less<>> entries;

  bool contains(std::string_view word) const { return entries.count(word) > 0; }
  std::vector<std::string> words() const;

  /// One entry per line, optional tab-separated category, "#" comments.
  static StereotypeLexicon parse(std::istream& in, std::string name);
  static StereotypeLexicon load(const std::filesystem::path& path, std::string name = {});
};

struct RateReport {
  std::string source;
  std::string group;
  std::string lexicon;
  double mean_pct = 0.0;
  double std_err = 0.0;
  std::size_t n = 0;
};

/// Percentage of each persona's tokens found in the lexicon, averaged over
/// personas, with the standard error of that mean.
RateReport lexicon_rate(const PersonaCorpus& subset, const StereotypeLexicon& lex);

struct PresenceReport {
  /// Tracked words that occur in the reference corpus, in input order.
  std::vector<std::pair<std::string, double>> words;
  /// Words absent from every reference persona.
  std::vector<std::string> other_words;
  /// Percentage of subset personas containing any of other_words.
  double other_words_pct = 0.0;
};

/// Percentage of personas whose tokens contain each word. Words that never
/// occur in `reference` (the subset itself by default) are bucketed into
/// "other words".
PresenceReport word_presence_rates(const PersonaCorpus& subset, const std::vector<std::string>& words,
                                   const PersonaCorpus* reference = nullptr);

/// One row per (source, group, lexicon); generated rows first.
std::vector<RateReport> compare_generated_vs_human(const PersonaCorpus& generated, const PersonaCorpus& human,
                                                   std::span<const StereotypeLexicon> lexicons,
                                                   std::span<const GroupSelector> groups);

void write_rates_tsv(std::ostream& os, std::span<const RateReport> rows);
nlohmann::json to_json(const RateReport& r);

}  // namespace marked
