#pragma once

// Synthetic corpora and scratch directories shared by the unit and
// acceptance tests.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "marked/corpus.hpp"

namespace fixtures {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("marked-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

inline marked::Persona persona(std::string id, std::string text, std::map<std::string, std::string> axes,
                               std::string model = "m1", std::string prompt_id = "persona_1") {
  marked::Persona p;
  p.id = std::move(id);
  p.text = std::move(text);
  p.axes = std::move(axes);
  p.model = std::move(model);
  p.prompt_id = std::move(prompt_id);
  p.source = marked::Source::generated;
  return p;
}

// One axis, three values, "u" unmarked.
inline marked::AxisSchema one_axis_schema() {
  marked::Axis a;
  a.name = "group";
  a.values = {"u", "a", "b"};
  a.unmarked = "u";
  return marked::AxisSchema({a});
}

// race {W, B} with W unmarked, gender {m, f} with m unmarked.
inline marked::AxisSchema two_axis_schema() {
  marked::Axis race{"race", {"W", "B"}, "W", {}};
  marked::Axis gender{"gender", {"m", "f"}, "m", {}};
  return marked::AxisSchema({race, gender});
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (const auto& t : toks) {
    if (!s.empty()) s += ' ';
    s += t;
  }
  return s;
}

// Filler text drawn from a shared vocabulary of `vocab` words.
inline std::vector<std::string> filler(std::mt19937_64& rng, std::size_t n, std::size_t vocab = 60) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(rng() % vocab));
  return out;
}

// 90 documents per value of a single three-valued axis. Each marked group
// owns a planted token used 50 times in its own documents and 5 times in
// every other group's; "common" appears once in every document.
inline marked::PersonaCorpus planted_corpus(std::uint64_t seed = 7) {
  std::mt19937_64 rng(seed);
  auto schema = one_axis_schema();
  std::vector<marked::Persona> ps;
  const std::vector<std::string> groups{"u", "a", "b"};
  for (const auto& g : groups) {
    for (int i = 0; i < 90; ++i) {
      auto toks = filler(rng, 20);
      toks.push_back("common");
      for (const auto& other : {"a", "b"}) {
        const bool own = g == other;
        if ((own && i < 50) || (!own && i < 5)) toks.push_back(std::string("planted") + other);
      }
      ps.push_back(persona(g + "-" + std::to_string(i), join_tokens(toks), {{"group", g}}));
    }
  }
  return marked::PersonaCorpus(schema, ps);
}

// Two-axis corpus where "raceonly" is elevated in B f relative to all W
// personas but occurs at the same rate in B f as in the m personas.
inline marked::PersonaCorpus intersection_corpus(std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  auto schema = two_axis_schema();
  std::vector<marked::Persona> ps;
  for (const std::string race : {"W", "B"}) {
    for (const std::string gender : {"m", "f"}) {
      for (int i = 0; i < 60; ++i) {
        auto toks = filler(rng, 20);
        // Rate per document: B f 0.5, B m 1, W 0. B f therefore matches
        // the m personas (0.5 overall) and exceeds W.
        if (race == "B" && (gender == "m" || i < 30)) toks.push_back("raceonly");
        // Elevated against both comparisons: only in B f.
        if (race == "B" && gender == "f" && i < 30) toks.push_back("both");
        ps.push_back(persona(race + gender + "-" + std::to_string(i), join_tokens(toks),
                             {{"race", race}, {"gender", gender}}));
      }
    }
  }
  return marked::PersonaCorpus(schema, ps);
}

// Every full group of the default schema, `per_group` personas each. Every
// document carries its group's marker token "mk<index>" twice on top of 30
// filler tokens.
inline marked::PersonaCorpus separable_corpus(std::size_t per_group = 90, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  auto schema = marked::AxisSchema::default_schema();
  std::vector<marked::Persona> ps;
  const auto groups = schema.full_groups();
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < per_group; ++i) {
      auto toks = filler(rng, 30, 200);
      toks.push_back("mk" + std::to_string(g));
      toks.push_back("mk" + std::to_string(g));
      std::shuffle(toks.begin(), toks.end(), rng);
      ps.push_back(persona(groups[g].key() + "#" + std::to_string(i), join_tokens(toks), groups[g].constraints()));
    }
  }
  return marked::PersonaCorpus(schema, ps);
}

// Default-schema corpus for pipeline runs: two models, ten personas per
// group, with a few group-flavoured words so the reports are not empty.
inline marked::PersonaCorpus pipeline_corpus(std::uint64_t seed = 5) {
  std::mt19937_64 rng(seed);
  auto schema = marked::AxisSchema::default_schema();
  std::vector<marked::Persona> ps;
  for (const std::string model : {"model-a", "model-b"}) {
    for (const auto& g : schema.full_groups()) {
      const auto& c = g.constraints();
      for (int i = 0; i < 10; ++i) {
        auto toks = filler(rng, 25, 80);
        toks.push_back("flavor" + c.at("race_ethnicity"));
        toks.push_back("flavor" + c.at("gender"));
        toks.push_back(i % 2 ? "resilient" : "warm");
        if (i % 3 == 0) toks.push_back("stereotype");
        if (i % 4 == 0) toks.push_back("good");
        ps.push_back(persona(model + "|" + g.key() + "|" + std::to_string(i), join_tokens(toks), c, model,
                             i % 2 ? "persona_1" : "persona_2"));
      }
    }
  }
  return marked::PersonaCorpus(schema, ps);
}

}  // namespace fixtures
