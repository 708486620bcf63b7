#pragma once

// Persona data model, JSONL ingestion, tokenization and partitioning.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace marked {

using TokenList = std::vector<std::string>;
using WordSet = std::set<std::string, std::less<>>;

enum class Source { generated, human_written };

std::string_view to_string(Source s);
std::optional<Source> parse_source(std::string_view s);

struct Persona {
  std::string id;
  std::string text;
  std::map<std::string, std::string> axes;
  std::string prompt_id;
  std::string prompt_text;
  std::string model;
  std::optional<Source> source;
  std::string created_at;
  // Generated outputs flagged as refusals may have empty text.
  bool refusal = false;
};

struct Axis {
  std::string name;
  std::vector<std::string> values;
  std::string unmarked;
  // Surface form used when rendering prompts ("ME" -> "Middle-Eastern").
  std::map<std::string, std::string> display;

  bool allows(std::string_view value) const;
  std::string display_name(const std::string& value) const;
};

class GroupSelector;

/// Ordered demographic axes, each with exactly one unmarked default.
class AxisSchema {
 public:
  AxisSchema() = default;
  explicit AxisSchema(std::vector<Axis> axes);

  /// race_ethnicity in {Asian, Black, Latine, ME, White} (unmarked White),
  /// gender in {man, woman, nonbinary} (unmarked man).
  static AxisSchema default_schema();
  static AxisSchema from_json(const nlohmann::json& j);
  static AxisSchema load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  const std::vector<Axis>& axes() const { return axes_; }
  const Axis* find(std::string_view name) const;
  const Axis& at(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  /// Every full combination of axis values, in schema order.
  std::vector<GroupSelector> full_groups() const;

 private:
  std::vector<Axis> axes_;
};

/// A (possibly intersectional) demographic group: one value per constrained axis.
class GroupSelector {
 public:
  GroupSelector() = default;
  explicit GroupSelector(std::map<std::string, std::string> constraints);
  GroupSelector(std::initializer_list<std::pair<const std::string, std::string>> c)
      : constraints_(c) {}

  const std::map<std::string, std::string>& constraints() const { return constraints_; }
  std::size_t arity() const { return constraints_.size(); }

  bool matches(const Persona& p) const;

  /// One selector per constrained axis: that axis pinned to its unmarked
  /// value, every other axis dropped. Ordered by schema axis order.
  std::vector<GroupSelector> unmarked_comparisons(const AxisSchema& schema) const;

  /// Throws ConfigError when an axis or value is not in the schema.
  void validate(const AxisSchema& schema) const;

  /// Human label in schema axis order, e.g. "Asian woman".
  std::string label(const AxisSchema& schema) const;
  /// Schema-free identity, e.g. "gender=woman,race_ethnicity=Asian".
  std::string key() const;

  auto operator<=>(const GroupSelector&) const = default;

 private:
  std::map<std::string, std::string> constraints_;
};

/// word -> token count for one partition of a corpus.
class CountTable {
 public:
  using Map = std::map<std::string, std::int64_t, std::less<>>;

  CountTable() = default;
  static CountTable from_counts(const Map& counts, std::int64_t doc_count = 0);

  void add(std::string_view word, std::int64_t n = 1);
  void add_document(const TokenList& tokens);
  CountTable& operator+=(const CountTable& other);

  std::int64_t count(std::string_view word) const;
  std::int64_t total() const { return total_; }
  std::int64_t doc_count() const { return doc_count_; }
  std::size_t vocab_size() const { return counts_.size(); }
  const Map& counts() const { return counts_; }

 private:
  Map counts_;
  std::int64_t total_ = 0;
  std::int64_t doc_count_ = 0;
};

/// Immutable, schema-validated collection of personas.
class PersonaCorpus {
 public:
  PersonaCorpus() = default;
  PersonaCorpus(AxisSchema schema, std::vector<Persona> personas);

  const AxisSchema& schema() const { return schema_; }
  std::span<const Persona> personas() const { return personas_; }
  std::size_t size() const { return personas_.size(); }
  bool empty() const { return personas_.empty(); }

  PersonaCorpus filter(const std::function<bool(const Persona&)>& keep) const;
  PersonaCorpus select(const GroupSelector& sel) const;
  PersonaCorpus for_model(std::string_view model) const;

  /// Sorted distinct model ids.
  std::vector<std::string> models() const;
  /// Token counts over every persona.
  CountTable counts() const;

 private:
  AxisSchema schema_;
  std::vector<Persona> personas_;
};

/// Lowercase, delete every non-alphanumeric character in place, split on
/// whitespace. "Almond-shaped eyes!" -> [almondshaped, eyes].
TokenList normalize_text(std::string_view raw);

nlohmann::json persona_to_json(const Persona& p);
Persona persona_from_json(const nlohmann::json& j);
void write_persona_line(std::ostream& os, const Persona& p);
void write_personas(const std::filesystem::path& path, const PersonaCorpus& corpus);

/// Reads a JSONL corpus. The schema comes from, in order of precedence: the
/// explicit sidecar argument, a leading {"schema": ...} header record,
/// a "<path>.schema.json" file next to the corpus, the default schema.
PersonaCorpus load_personas(const std::filesystem::path& path,
                            const std::optional<std::filesystem::path>& schema_path = std::nullopt);
PersonaCorpus parse_personas(std::istream& in, const std::optional<AxisSchema>& schema = std::nullopt);

/// Converts a two-column (text, label) CSV of human-written portrayals.
/// Labels are space-separated axis values ("Black woman") matched against the schema.
PersonaCorpus import_csv(const std::filesystem::path& path, const AxisSchema& schema,
                         Source source = Source::human_written);
PersonaCorpus parse_csv(std::istream& in, const AxisSchema& schema,
                        Source source = Source::human_written);

/// Token counts over every persona matching the selector. Throws on empty partitions.
CountTable partition(const PersonaCorpus& corpus, const GroupSelector& sel);

/// Drops any token found in any of the stoplists.
TokenList anonymize(const TokenList& tokens, std::span<const WordSet> stoplists);

WordSet default_pronouns();
WordSet default_identity_descriptors();
/// Newline-delimited word list; "#" starts a comment; entries are normalized
/// and multi-word entries merged into one token.
WordSet load_word_list(const std::filesystem::path& path);
WordSet parse_word_list(std::istream& in);

/// normalize_text with the resulting tokens concatenated (lexicon entries).
std::string normalize_entry(std::string_view raw);

}  // namespace marked
