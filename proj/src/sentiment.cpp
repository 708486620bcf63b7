#include "marked/sentiment.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "marked/error.hpp"

namespace marked {

namespace {

constexpr double kBoosterIncrement = 0.293;
constexpr std::size_t kNegationWindow = 3;

double sample_std(const std::vector<double>& xs, double mean) {
  if (xs.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::unordered_map<std::string, double> default_boosters() {
  std::unordered_map<std::string, double> b;
  for (const char* w : {"absolutely", "amazingly", "awfully", "completely", "considerably", "decidedly", "deeply",
                        "enormously", "entirely", "especially", "exceptionally", "extremely", "fabulously",
                        "fully", "greatly", "highly", "hugely", "incredibly", "intensely", "majorly", "more",
                        "most", "particularly", "purely", "quite", "really", "remarkably", "so", "substantially",
                        "thoroughly", "totally", "tremendously", "unbelievably", "unusually", "utterly", "very"}) {
    b[w] = kBoosterIncrement;
  }
  for (const char* w : {"almost", "barely", "hardly", "kinda", "kindof", "less", "little", "marginally",
                        "occasionally", "partly", "scarcely", "slightly", "somewhat", "sorta", "sortof"}) {
    b[w] = -kBoosterIncrement;
  }
  return b;
}

WordSet default_negations() {
  // Contractions appear without apostrophes, as the tokenizer leaves them.
  return {"aint",    "arent",   "cannot",  "cant",     "couldnt", "darent", "didnt",   "doesnt",
          "dont",    "hadnt",   "hasnt",   "havent",   "isnt",    "mightnt", "mustnt", "neither",
          "never",   "none",    "nope",    "nor",      "not",     "nothing", "nowhere", "oughtnt",
          "shant",   "shouldnt", "wasnt",  "werent",   "without", "wont",   "wouldnt", "rarely",
          "seldom",  "despite"};
}

SentimentLexicon SentimentLexicon::with_default_rules(std::unordered_map<std::string, double> valence) {
  SentimentLexicon lex;
  for (const auto& [w, v] : valence) {
    if (!std::isfinite(v) || v < -4.0 || v > 4.0) {
      throw ConfigError("sentiment lexicon: valence of '" + w + "' outside [-4, 4]");
    }
  }
  lex.valence = std::move(valence);
  lex.boosters = default_boosters();
  lex.negations = default_negations();
  return lex;
}

SentimentLexicon SentimentLexicon::parse(std::istream& in) {
  std::unordered_map<std::string, double> valence;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string token, value;
    if (!std::getline(ls, token, '\t') || !std::getline(ls, value, '\t')) {
      throw ConfigError("sentiment lexicon line " + std::to_string(lineno) + ": expected token<TAB>valence");
    }
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(value, &used);
    } catch (const std::exception&) {
      throw ConfigError("sentiment lexicon line " + std::to_string(lineno) + ": bad valence '" + value + "'");
    }
    // Entries that normalize to nothing (emoticons) cannot match a token.
    std::string w = normalize_entry(token);
    if (!w.empty()) valence.emplace(std::move(w), v);
  }
  return with_default_rules(std::move(valence));
}

SentimentLexicon SentimentLexicon::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open sentiment lexicon " + path.filename().string());
  return parse(in);
}

SentimentLexicon SentimentLexicon::negated() const {
  SentimentLexicon out = *this;
  for (auto& [w, v] : out.valence) v = -v;
  return out;
}

SentimentScore compound_score(const TokenList& tokens, const SentimentLexicon& lex) {
  SentimentScore s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto it = lex.valence.find(tokens[i]);
    if (it == lex.valence.end() || it->second == 0.0) continue;
    double v = it->second;
    if (i > 0) {
      if (auto b = lex.boosters.find(tokens[i - 1]); b != lex.boosters.end()) {
        v += v > 0.0 ? b->second : -b->second;
      }
    }
    for (std::size_t back = 1; back <= kNegationWindow && back <= i; ++back) {
      if (lex.negations.count(tokens[i - back])) {
        v *= kNegationScalar;
        break;
      }
    }
    s.sum += v;
  }
  s.compound = s.sum / std::sqrt(s.sum * s.sum + kNormalizationAlpha);
  return s;
}

SentimentScore compound_score(std::string_view text, const SentimentLexicon& lex) {
  return compound_score(normalize_text(text), lex);
}

SentimentStats corpus_sentiment(const PersonaCorpus& subset, const SentimentLexicon& lex) {
  if (subset.empty()) throw AnalysisError("sentiment over an empty subset");
  std::vector<double> scores;
  scores.reserve(subset.size());
  for (const auto& p : subset.personas()) scores.push_back(compound_score(p.text, lex).compound);
  SentimentStats st;
  st.n = scores.size();
  for (double x : scores) st.mean += x;
  st.mean /= static_cast<double>(st.n);
  st.stddev = sample_std(scores, st.mean);
  return st;
}

WordSentiment word_sentiment(const std::vector<std::string>& words, const SentimentLexicon& lex) {
  WordSentiment out;
  if (words.empty()) return out;
  std::vector<double> xs;
  for (const auto& w : words) {
    double c = compound_score(w, lex).compound;
    out.scores.emplace_back(w, c);
    xs.push_back(c);
    if (c < 0.0) out.negatives.push_back(w);
  }
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  out.mean = mean;
  out.stddev = sample_std(xs, mean);
  return out;
}

}  // namespace marked
