#pragma once

// One-vs-all linear SVMs over anonymized bag-of-words relative frequencies.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>
#include <json.hpp>

#include "marked/corpus.hpp"

namespace marked {

/// word -> frequency / document token count.
using BowVector = std::map<std::string, double, std::less<>>;

BowVector bag_of_words(const TokenList& tokens);

struct Document {
  std::string label;
  TokenList tokens;
};

/// Normalizes and anonymizes every persona; the label joins the persona's
/// values on `label_axes` in schema order ("Asian woman").
std::vector<Document> make_documents(const PersonaCorpus& corpus, std::span<const std::string> label_axes,
                                     std::span<const WordSet> stoplists);

/// Per-label shuffle then cut: each label contributes round(n * test_fraction)
/// documents to the test side, clamped to [1, n-1].
std::pair<std::vector<Document>, std::vector<Document>> stratified_split(const std::vector<Document>& docs,
                                                                         double test_fraction, std::uint64_t seed);

struct SvmConfig {
  double c = 1.0;
  int epochs = 100;
  std::uint64_t seed = 0;
};

struct OvaModel {
  std::vector<std::string> vocabulary;  // sorted
  std::vector<std::string> groups;      // sorted; argmax ties go to the earlier group
  Eigen::MatrixXd weights;              // groups x vocabulary
  Eigen::VectorXd bias;
  SvmConfig config;
  /// Final regularized hinge objective of each binary classifier.
  std::vector<double> objective;

  Eigen::VectorXd decision_values(const BowVector& x) const;
  std::string predict(const BowVector& x) const;
  std::size_t group_index(std::string_view group) const;

  nlohmann::json to_json() const;
  static OvaModel from_json(const nlohmann::json& j);
};

/// Hinge loss + L2 by stochastic subgradient descent with step 1/(lambda t),
/// lambda = 1/(C n). The bias is an extra always-on feature.
OvaModel fit_ova(const std::vector<Document>& train, const SvmConfig& config = {});

struct Evaluation {
  double accuracy = 0.0;
  std::map<std::string, double> per_group_accuracy;
  std::size_t n = 0;
};

Evaluation evaluate(const OvaModel& model, const std::vector<Document>& test);

/// Words with the largest weight for the group, descending, ties lexicographic.
std::vector<std::string> top_features(const OvaModel& model, std::string_view group, std::size_t k = 10);

struct SeedSweep {
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for one seed
  OvaModel first_model;
};

/// Split, fit and evaluate once per seed.
SeedSweep evaluate_seeds(const std::vector<Document>& docs, double test_fraction, const SvmConfig& config,
                         std::span<const std::uint64_t> seeds);

}  // namespace marked
