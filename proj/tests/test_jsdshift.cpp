#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "marked/error.hpp"
#include "marked/jsdshift.hpp"
#include "marked/markedwords.hpp"
#include "oracles/jsd_oracle.hpp"
#include "support/fixtures.hpp"

using namespace marked;

namespace {

double abs_sum(const JsdShiftResult& r) {
  double s = 0.0;
  for (const auto& w : r.words) s += std::abs(w.contribution);
  return s;
}

std::map<std::string, double> plain(const Distribution& d) { return {d.begin(), d.end()}; }

}  // namespace

TEST_CASE("identical distributions") {
  Distribution p{{"a", 0.2}, {"b", 0.8}};
  auto r = jsd_word_shift(p, p);
  CHECK(r.total_jsd == doctest::Approx(0.0));
  for (const auto& w : r.words) CHECK(w.contribution == doctest::Approx(0.0));
}

TEST_CASE("disjoint single-token supports") {
  auto r = jsd_word_shift(Distribution{{"a", 1.0}}, Distribution{{"b", 1.0}});
  CHECK(r.total_jsd == doctest::Approx(1.0).epsilon(1e-12));
  REQUIRE(r.words.size() == 2);
  CHECK(r.words[0].word == "a");
  CHECK(r.words[0].contribution == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.words[1].contribution == doctest::Approx(-0.5).epsilon(1e-12));
}

TEST_CASE("partial overlap matches the entropy form") {
  Distribution p{{"a", 0.5}, {"b", 0.5}}, q{{"a", 1.0}};
  auto r = jsd_word_shift(p, q);
  CHECK(std::abs(r.total_jsd - oracle::jsd_entropy_form(plain(p), plain(q))) < 1e-12);
  CHECK(std::abs(abs_sum(r) - r.total_jsd) < 1e-12);
}

TEST_CASE("random pairs: decomposition sums to the entropy form") {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    Distribution p, q;
    const int vocab = 1 + static_cast<int>(rng() % 30);
    for (int i = 0; i < vocab; ++i) {
      if (u(rng) < 0.7) p["w" + std::to_string(i)] = u(rng) + 1e-3;
      if (u(rng) < 0.7) q["w" + std::to_string(i)] = u(rng) + 1e-3;
    }
    if (p.empty()) p["w0"] = 1.0;
    if (q.empty()) q["w1"] = 1.0;
    auto r = jsd_word_shift(p, q);
    const double h = oracle::jsd_entropy_form(plain(p), plain(q));
    CHECK(std::abs(abs_sum(r) - h) < 1e-9);
    CHECK(std::abs(r.total_jsd - h) < 1e-9);
    CHECK(r.total_jsd >= -1e-15);
    CHECK(r.total_jsd <= 1.0 + 1e-12);
    for (const auto& w : r.words) {
      // Sign says which side the word leans to.
      if (w.p > w.q) CHECK(w.contribution > 0.0);
      if (w.p < w.q) CHECK(w.contribution < 0.0);
    }
  }
}

TEST_CASE("ranking keeps the top k by magnitude with lexicographic ties") {
  Distribution p{{"a", 1.0}, {"b", 1.0}, {"c", 2.0}}, q{{"d", 1.0}, {"e", 1.0}};
  auto r = jsd_word_shift(p, q, 3);
  REQUIRE(r.ranked.size() == 3);
  CHECK(r.ranked_words() == std::vector<std::string>{"c", "d", "e"});
  CHECK(jsd_word_shift(p, q, 100).ranked.size() == 5);
  CHECK_THROWS_AS(jsd_word_shift(p, q, 0), AnalysisError);
  CHECK_THROWS_AS(jsd_word_shift(Distribution{}, q), AnalysisError);
}

TEST_CASE("count tables are normalized to relative frequencies") {
  auto a = CountTable::from_counts({{"x", 2}, {"y", 2}});
  auto b = CountTable::from_counts({{"x", 10}});
  auto r = jsd_word_shift(a, b);
  auto s = jsd_word_shift(Distribution{{"x", 0.5}, {"y", 0.5}}, Distribution{{"x", 1.0}});
  CHECK(r.total_jsd == doctest::Approx(s.total_jsd).epsilon(1e-12));
}

TEST_CASE("set agreement") {
  std::vector<std::string> ten;
  for (int i = 0; i < 10; ++i) ten.push_back("w" + std::to_string(i));
  auto d = set_agreement({"a"}, {"b"});
  CHECK(d.overlap == 0);
  CHECK(d.jaccard == 0.0);
  auto same = set_agreement(ten, ten);
  CHECK(same.overlap == 10);
  CHECK(same.jaccard == 1.0);
  auto half = set_agreement({"a", "b", "c"}, {"b", "c", "d"});
  CHECK(half.overlap == 2);
  CHECK(half.jaccard == doctest::Approx(0.5));
  CHECK(set_agreement({}, {}).jaccard == 0.0);
}

TEST_CASE("planted tokens lead the word shift and agree with marked words") {
  auto corpus = fixtures::planted_corpus();
  GroupSelector a{{"group", "a"}};
  auto rep = marked_words(corpus, a, 500.0, 1.96);
  auto shift = jsd_word_shift(partition(corpus, a), partition(corpus, GroupSelector{{"group", "u"}}), 10);
  shift.target_label = rep.label;
  shift.comparison_label = "u";
  CHECK(shift.ranked.front().word == "planteda");
  auto ag = jsd_agreement(rep, shift);
  CHECK(ag.overlap >= 1);

  shift.target_label = "other";
  CHECK_THROWS(jsd_agreement(rep, shift));

  std::ostringstream os;
  write_jsd_tsv(os, {shift});
  CHECK(os.str().find("\t1\tplanteda\t") != std::string::npos);
}
