#include "marked/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "marked/error.hpp"

namespace marked {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

bool is_ascii_alnum(unsigned char c) { return c < 0x80 && std::isalnum(c); }
bool is_ascii_space(unsigned char c) { return c < 0x80 && std::isspace(c); }

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) {
    if (static_cast<unsigned char>(c) < 0x80) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::string get_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw ConfigError(std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(Source s) {
  return s == Source::generated ? "generated" : "human_written";
}

std::optional<Source> parse_source(std::string_view s) {
  if (s == "generated") return Source::generated;
  if (s == "human_written") return Source::human_written;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Schema

bool Axis::allows(std::string_view value) const {
  return std::find(values.begin(), values.end(), value) != values.end();
}

std::string Axis::display_name(const std::string& value) const {
  auto it = display.find(value);
  return it == display.end() ? value : it->second;
}

AxisSchema::AxisSchema(std::vector<Axis> axes) : axes_(std::move(axes)) {
  std::set<std::string, std::less<>> names;
  for (const auto& a : axes_) {
    if (a.name.empty()) throw ConfigError("schema: axis with empty name");
    if (!names.insert(a.name).second) throw ConfigError("schema: duplicate axis '" + a.name + "'");
    if (a.values.empty()) throw ConfigError("schema: axis '" + a.name + "' has no values");
    std::set<std::string, std::less<>> seen;
    for (const auto& v : a.values) {
      if (!seen.insert(v).second) throw ConfigError("schema: duplicate value '" + v + "' on axis '" + a.name + "'");
    }
    if (!a.allows(a.unmarked)) {
      throw ConfigError("schema: unmarked value '" + a.unmarked + "' not among the values of axis '" + a.name + "'");
    }
  }
}

AxisSchema AxisSchema::default_schema() {
  return AxisSchema({
      Axis{"race_ethnicity", {"Asian", "Black", "Latine", "ME", "White"}, "White", {{"ME", "Middle-Eastern"}}},
      Axis{"gender", {"man", "woman", "nonbinary"}, "man", {{"nonbinary", "nonbinary person"}}},
  });
}

AxisSchema AxisSchema::from_json(const json& j) {
  if (!j.is_object() || !j.contains("axes") || !j["axes"].is_array()) {
    throw ConfigError("schema: expected an object with an 'axes' array");
  }
  std::vector<Axis> axes;
  for (const auto& ja : j["axes"]) {
    try {
      Axis a;
      a.name = ja.at("name").get<std::string>();
      a.values = ja.at("values").get<std::vector<std::string>>();
      a.unmarked = ja.at("unmarked").get<std::string>();
      if (ja.contains("display")) a.display = ja["display"].get<std::map<std::string, std::string>>();
      axes.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("schema: malformed axis: ") + e.what());
    }
  }
  return AxisSchema(std::move(axes));
}

AxisSchema AxisSchema::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file " + path.filename().string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("schema file " + path.filename().string() + " is not valid JSON");
  return from_json(j);
}

json AxisSchema::to_json() const {
  json axes = json::array();
  for (const auto& a : axes_) {
    json ja{{"name", a.name}, {"values", a.values}, {"unmarked", a.unmarked}};
    if (!a.display.empty()) ja["display"] = a.display;
    axes.push_back(std::move(ja));
  }
  return json{{"axes", std::move(axes)}};
}

const Axis* AxisSchema::find(std::string_view name) const {
  for (const auto& a : axes_) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const Axis& AxisSchema::at(std::string_view name) const {
  const Axis* a = find(name);
  if (!a) throw ConfigError("unknown axis '" + std::string(name) + "'");
  return *a;
}

std::size_t AxisSchema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < axes_.size(); ++i) {
    if (axes_[i].name == name) return i;
  }
  throw ConfigError("unknown axis '" + std::string(name) + "'");
}

std::vector<GroupSelector> AxisSchema::full_groups() const {
  std::vector<std::map<std::string, std::string>> acc{{}};
  for (const auto& a : axes_) {
    std::vector<std::map<std::string, std::string>> next;
    for (const auto& partial : acc) {
      for (const auto& v : a.values) {
        auto m = partial;
        m[a.name] = v;
        next.push_back(std::move(m));
      }
    }
    acc = std::move(next);
  }
  std::vector<GroupSelector> out;
  out.reserve(acc.size());
  for (auto& m : acc) out.emplace_back(std::move(m));
  return out;
}

// ---------------------------------------------------------------------------
// GroupSelector

GroupSelector::GroupSelector(std::map<std::string, std::string> constraints)
    : constraints_(std::move(constraints)) {}

bool GroupSelector::matches(const Persona& p) const {
  for (const auto& [axis, value] : constraints_) {
    auto it = p.axes.find(axis);
    if (it == p.axes.end() || it->second != value) return false;
  }
  return true;
}

std::vector<GroupSelector> GroupSelector::unmarked_comparisons(const AxisSchema& schema) const {
  validate(schema);
  std::vector<GroupSelector> out;
  for (const auto& axis : schema.axes()) {
    if (constraints_.count(axis.name)) out.push_back(GroupSelector({{axis.name, axis.unmarked}}));
  }
  return out;
}

void GroupSelector::validate(const AxisSchema& schema) const {
  if (constraints_.empty()) throw ConfigError("group selector constrains no axis");
  for (const auto& [axis, value] : constraints_) {
    const Axis* a = schema.find(axis);
    if (!a) throw ConfigError("group selector uses unknown axis '" + axis + "'");
    if (!a->allows(value)) throw ConfigError("unknown value '" + value + "' for axis '" + axis + "'");
  }
}

std::string GroupSelector::label(const AxisSchema& schema) const {
  std::string out;
  for (const auto& axis : schema.axes()) {
    auto it = constraints_.find(axis.name);
    if (it == constraints_.end()) continue;
    if (!out.empty()) out += ' ';
    out += it->second;
  }
  // Axes outside the schema still show up, after the known ones.
  for (const auto& [axis, value] : constraints_) {
    if (schema.find(axis)) continue;
    if (!out.empty()) out += ' ';
    out += value;
  }
  return out;
}

std::string GroupSelector::key() const {
  std::string out;
  for (const auto& [axis, value] : constraints_) {
    if (!out.empty()) out += ',';
    out += axis + "=" + value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// CountTable

CountTable CountTable::from_counts(const Map& counts, std::int64_t doc_count) {
  CountTable t;
  for (const auto& [w, n] : counts) t.add(w, n);
  t.doc_count_ = doc_count;
  return t;
}

void CountTable::add(std::string_view word, std::int64_t n) {
  if (n < 0) throw AnalysisError("negative count for '" + std::string(word) + "'");
  if (n == 0) return;
  auto it = counts_.find(word);
  if (it == counts_.end()) {
    counts_.emplace(std::string(word), n);
  } else {
    it->second += n;
  }
  total_ += n;
}

void CountTable::add_document(const TokenList& tokens) {
  for (const auto& t : tokens) add(t);
  ++doc_count_;
}

CountTable& CountTable::operator+=(const CountTable& other) {
  for (const auto& [w, n] : other.counts_) add(w, n);
  doc_count_ += other.doc_count_;
  return *this;
}

std::int64_t CountTable::count(std::string_view word) const {
  auto it = counts_.find(word);
  return it == counts_.end() ? 0 : it->second;
}

// ---------------------------------------------------------------------------
// PersonaCorpus

PersonaCorpus::PersonaCorpus(AxisSchema schema, std::vector<Persona> personas)
    : schema_(std::move(schema)), personas_(std::move(personas)) {
  std::unordered_set<std::string> ids;
  for (const auto& p : personas_) {
    if (!ids.insert(p.id).second) throw ConfigError("duplicate persona id '" + p.id + "'");
    for (const auto& [axis, value] : p.axes) {
      const Axis* a = schema_.find(axis);
      if (!a) throw ConfigError("persona '" + p.id + "': unknown axis '" + axis + "'");
      if (!a->allows(value)) {
        throw ConfigError("persona '" + p.id + "': unknown value '" + value + "' for axis '" + axis + "'");
      }
    }
    if (p.source == Source::generated && p.text.empty() && !p.refusal) {
      throw ConfigError("persona '" + p.id + "': empty text for a generated persona not flagged as refusal");
    }
  }
}

PersonaCorpus PersonaCorpus::filter(const std::function<bool(const Persona&)>& keep) const {
  std::vector<Persona> out;
  std::copy_if(personas_.begin(), personas_.end(), std::back_inserter(out), keep);
  PersonaCorpus c;
  c.schema_ = schema_;
  c.personas_ = std::move(out);
  return c;
}

PersonaCorpus PersonaCorpus::select(const GroupSelector& sel) const {
  sel.validate(schema_);
  return filter([&](const Persona& p) { return sel.matches(p); });
}

PersonaCorpus PersonaCorpus::for_model(std::string_view model) const {
  return filter([&](const Persona& p) { return p.model == model; });
}

std::vector<std::string> PersonaCorpus::models() const {
  std::set<std::string> s;
  for (const auto& p : personas_) s.insert(p.model);
  return {s.begin(), s.end()};
}

CountTable PersonaCorpus::counts() const {
  CountTable t;
  for (const auto& p : personas_) t.add_document(normalize_text(p.text));
  return t;
}

// ---------------------------------------------------------------------------
// Tokenization

TokenList normalize_text(std::string_view raw) {
  TokenList out;
  std::string cur;
  for (char ch : raw) {
    auto c = static_cast<unsigned char>(ch);
    if (is_ascii_space(c)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (is_ascii_alnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string normalize_entry(std::string_view raw) {
  std::string out;
  for (const auto& t : normalize_text(raw)) out += t;
  return out;
}

// ---------------------------------------------------------------------------
// JSONL

json persona_to_json(const Persona& p) {
  json j{{"id", p.id},
         {"text", p.text},
         {"axes", p.axes},
         {"prompt_id", p.prompt_id},
         {"prompt_text", p.prompt_text},
         {"model", p.model}};
  j["source"] = p.source ? json(std::string(to_string(*p.source))) : json(nullptr);
  j["created_at"] = p.created_at;
  if (p.refusal) j["refusal"] = true;
  return j;
}

Persona persona_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("persona record must be a JSON object");
  Persona p;
  p.id = get_string(j, "id");
  if (p.id.empty()) throw ConfigError("persona record without 'id'");
  p.text = get_string(j, "text");
  auto axes = j.find("axes");
  if (axes == j.end() || !axes->is_object()) throw ConfigError("persona '" + p.id + "': missing 'axes' object");
  for (const auto& [k, v] : axes->items()) {
    if (!v.is_string()) throw ConfigError("persona '" + p.id + "': axis '" + k + "' must be a string");
    p.axes[k] = v.get<std::string>();
  }
  p.prompt_id = get_string(j, "prompt_id");
  p.prompt_text = get_string(j, "prompt_text");
  p.model = get_string(j, "model");
  std::string src = get_string(j, "source");
  if (!src.empty()) {
    p.source = parse_source(src);
    if (!p.source) throw ConfigError("persona '" + p.id + "': unknown source '" + src + "'");
  }
  p.created_at = get_string(j, "created_at");
  if (auto r = j.find("refusal"); r != j.end() && r->is_boolean()) p.refusal = r->get<bool>();
  return p;
}

void write_persona_line(std::ostream& os, const Persona& p) { os << persona_to_json(p).dump() << '\n'; }

void write_personas(const fs::path& path, const PersonaCorpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.filename().string());
  for (const auto& p : corpus.personas()) write_persona_line(out, p);
}

PersonaCorpus parse_personas(std::istream& in, const std::optional<AxisSchema>& schema) {
  std::optional<AxisSchema> header_schema;
  std::vector<Persona> personas;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ConfigError("malformed JSON on line " + std::to_string(lineno));
    if (j.is_object() && j.contains("schema") && !j.contains("id")) {
      if (!personas.empty()) throw ConfigError("schema header record on line " + std::to_string(lineno) + " must precede personas");
      header_schema = AxisSchema::from_json(j["schema"]);
      continue;
    }
    try {
      personas.push_back(persona_from_json(j));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  AxisSchema s = schema ? *schema : header_schema ? *header_schema : AxisSchema::default_schema();
  return PersonaCorpus(std::move(s), std::move(personas));
}

PersonaCorpus load_personas(const fs::path& path, const std::optional<fs::path>& schema_path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open corpus " + path.filename().string());
  std::optional<AxisSchema> schema;
  if (schema_path) {
    schema = AxisSchema::load(*schema_path);
  } else {
    fs::path sidecar = path;
    sidecar += ".schema.json";
    if (fs::exists(sidecar)) schema = AxisSchema::load(sidecar);
  }
  // A header record overrides only the built-in default, never an explicit sidecar.
  if (schema && !schema_path) {
    std::string first;
    auto pos = in.tellg();
    while (std::getline(in, first) && first.find_first_not_of(" \t\r") == std::string::npos) {
    }
    json j = json::parse(first, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.contains("schema") && !j.contains("id")) schema.reset();
    in.clear();
    in.seekg(pos);
  }
  return parse_personas(in, schema);
}

// ---------------------------------------------------------------------------
// CSV import

namespace {

// RFC 4180 records: quoted fields may contain commas, quotes ("") and newlines.
bool read_csv_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      fields.push_back(std::move(field));
      return true;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

std::map<std::string, std::string> parse_label(const std::string& label, const AxisSchema& schema) {
  std::map<std::string, std::string> axes;
  std::istringstream ss(label);
  std::string word;
  while (ss >> word) {
    bool found = false;
    for (const auto& a : schema.axes()) {
      for (const auto& v : a.values) {
        if (lower_ascii(v) == lower_ascii(word)) {
          if (axes.count(a.name)) throw ConfigError("label '" + label + "' sets axis '" + a.name + "' twice");
          axes[a.name] = v;
          found = true;
          break;
        }
      }
      if (found) break;
    }
    if (!found) throw ConfigError("label '" + label + "': unknown value '" + word + "'");
  }
  if (axes.empty()) throw ConfigError("empty label");
  return axes;
}

}  // namespace

PersonaCorpus parse_csv(std::istream& in, const AxisSchema& schema, Source source) {
  std::vector<Persona> personas;
  std::vector<std::string> fields;
  std::size_t record = 0;
  while (read_csv_record(in, fields)) {
    ++record;
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (record == 1 && fields.size() == 2 && lower_ascii(fields[0]) == "text" && lower_ascii(fields[1]) == "label") {
      continue;
    }
    if (fields.size() != 2) {
      throw ConfigError("CSV record " + std::to_string(record) + ": expected 2 columns, got " + std::to_string(fields.size()));
    }
    Persona p;
    p.id = "human-" + std::to_string(record);
    p.text = fields[0];
    try {
      p.axes = parse_label(fields[1], schema);
    } catch (const ConfigError& e) {
      throw ConfigError("CSV record " + std::to_string(record) + ": " + e.what());
    }
    p.model = "human";
    p.source = source;
    personas.push_back(std::move(p));
  }
  return PersonaCorpus(schema, std::move(personas));
}

PersonaCorpus import_csv(const fs::path& path, const AxisSchema& schema, Source source) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.filename().string());
  return parse_csv(in, schema, source);
}

// ---------------------------------------------------------------------------
// Partitioning and anonymization

CountTable partition(const PersonaCorpus& corpus, const GroupSelector& sel) {
  sel.validate(corpus.schema());
  CountTable t;
  for (const auto& p : corpus.personas()) {
    if (sel.matches(p)) t.add_document(normalize_text(p.text));
  }
  if (t.doc_count() == 0) {
    throw AnalysisError("empty partition for group '" + sel.label(corpus.schema()) + "'");
  }
  return t;
}

TokenList anonymize(const TokenList& tokens, std::span<const WordSet> stoplists) {
  TokenList out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    bool drop = std::any_of(stoplists.begin(), stoplists.end(), [&](const WordSet& s) { return s.count(t) > 0; });
    if (!drop) out.push_back(t);
  }
  return out;
}

WordSet default_pronouns() {
  return {"i",      "me",       "my",        "mine",       "myself",   "we",       "us",
          "our",    "ours",     "ourselves", "you",        "your",     "yours",    "yourself",
          "yourselves", "he",   "him",       "his",        "himself",  "she",      "her",
          "hers",   "herself",  "they",      "them",       "their",    "theirs",   "themselves",
          "themself", "it",     "its",       "itself",     "xe",       "xem",      "xyr",
          "ze",     "zir",      "hir",       "im",         "ive",      "id",       "hes",
          "shes",   "theyre",   "theyve",    "theyd",      "theyll",   "youre",    "youve",
          "youd",   "youll",    "weve",      "itll"};
}

WordSet default_identity_descriptors() {
  return {
      // race / ethnicity
      "asian", "asians", "asianamerican", "black", "blacks", "africanamerican", "african", "afro",
      "latine", "latina", "latinas", "latino", "latinos", "latinx", "latin", "hispanic", "hispanics",
      "chicana", "chicano", "me", "middle", "eastern", "middleeastern", "mideastern", "arab", "arabs",
      "arabic", "white", "whites", "caucasian", "caucasians", "european", "race", "racial", "ethnicity",
      "ethnic",
      // gender
      "man", "men", "mans", "woman", "women", "womans", "womens", "nonbinary", "enby", "genderqueer",
      "male", "males", "female", "females", "masculine", "feminine", "boy", "boys", "girl", "girls",
      "guy", "guys", "gentleman", "gentlemen", "lady", "ladies", "person", "gender",
  };
}

WordSet parse_word_list(std::istream& in) {
  WordSet out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::string w = normalize_entry(line);
    if (!w.empty()) out.insert(std::move(w));
  }
  return out;
}

WordSet load_word_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open word list " + path.filename().string());
  return parse_word_list(in);
}

}  // namespace marked
