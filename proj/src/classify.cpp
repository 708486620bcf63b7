#include "marked/classify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "marked/error.hpp"

namespace marked {

using nlohmann::json;
using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

namespace {

// Fisher-Yates on raw engine output, so orderings do not depend on the
// standard library's distribution implementation.
void shuffle(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
}

SparseRows design_matrix(const std::vector<Document>& docs, const std::vector<std::string>& vocab) {
  std::vector<Eigen::Triplet<double>> triplets;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    for (const auto& [w, f] : bag_of_words(docs[i].tokens)) {
      auto it = std::lower_bound(vocab.begin(), vocab.end(), w);
      if (it != vocab.end() && *it == w) {
        triplets.emplace_back(static_cast<int>(i), static_cast<int>(it - vocab.begin()), f);
      }
    }
  }
  SparseRows x(static_cast<Eigen::Index>(docs.size()), static_cast<Eigen::Index>(vocab.size()));
  x.setFromTriplets(triplets.begin(), triplets.end());
  return x;
}

double row_dot(const SparseRows& x, Eigen::Index row, const Eigen::VectorXd& v) {
  double acc = 0.0;
  for (SparseRows::InnerIterator it(x, row); it; ++it) acc += it.value() * v[it.index()];
  return acc;
}

struct BinaryFit {
  Eigen::VectorXd w;
  double b = 0.0;
  double objective = 0.0;
};

BinaryFit fit_binary(const SparseRows& x, const std::vector<double>& y, const SvmConfig& cfg, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(x.rows());
  const double lambda = 1.0 / (cfg.c * static_cast<double>(n));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(x.cols());
  double vb = 0.0;
  double scale = 1.0;  // w = scale * v
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::uint64_t t = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, rng);
    for (std::size_t i : order) {
      ++t;
      const double eta = 1.0 / (lambda * static_cast<double>(t));
      const auto row = static_cast<Eigen::Index>(i);
      const double margin = y[i] * scale * (row_dot(x, row, v) + vb);
      const double decay = 1.0 - eta * lambda;
      if (decay <= 0.0) {
        v.setZero();
        vb = 0.0;
        scale = 1.0;
      } else {
        scale *= decay;
      }
      if (margin < 1.0) {
        const double step = eta * y[i] / scale;
        for (SparseRows::InnerIterator it(x, row); it; ++it) v[it.index()] += step * it.value();
        vb += step;
      }
      if (scale < 1e-9) {
        v *= scale;
        vb *= scale;
        scale = 1.0;
      }
    }
  }

  BinaryFit out;
  out.w = scale * v;
  out.b = scale * vb;
  double hinge = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = row_dot(x, static_cast<Eigen::Index>(i), out.w) + out.b;
    hinge += std::max(0.0, 1.0 - y[i] * f);
  }
  out.objective = 0.5 * lambda * (out.w.squaredNorm() + out.b * out.b) + hinge / static_cast<double>(n);
  return out;
}

}  // namespace

BowVector bag_of_words(const TokenList& tokens) {
  BowVector out;
  if (tokens.empty()) return out;
  for (const auto& t : tokens) out[t] += 1.0;
  const double n = static_cast<double>(tokens.size());
  for (auto& [w, f] : out) f /= n;
  return out;
}

std::vector<Document> make_documents(const PersonaCorpus& corpus, std::span<const std::string> label_axes,
                                     std::span<const WordSet> stoplists) {
  if (label_axes.empty()) throw ConfigError("classifier needs at least one label axis");
  std::map<std::string, std::string> probe;
  for (const auto& a : label_axes) probe[a] = corpus.schema().at(a).unmarked;
  GroupSelector(probe).validate(corpus.schema());

  std::vector<Document> docs;
  docs.reserve(corpus.size());
  for (const auto& p : corpus.personas()) {
    std::map<std::string, std::string> c;
    for (const auto& a : label_axes) {
      auto it = p.axes.find(a);
      if (it == p.axes.end()) throw ConfigError("persona '" + p.id + "' has no value for axis '" + a + "'");
      c[a] = it->second;
    }
    docs.push_back({GroupSelector(c).label(corpus.schema()), anonymize(normalize_text(p.text), stoplists)});
  }
  return docs;
}

std::pair<std::vector<Document>, std::vector<Document>> stratified_split(const std::vector<Document>& docs,
                                                                         double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in (0, 1)");
  std::map<std::string, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < docs.size(); ++i) by_label[docs[i].label].push_back(i);

  std::mt19937_64 rng(seed);
  std::vector<bool> is_test(docs.size(), false);
  for (auto& [label, idx] : by_label) {
    if (idx.size() < 2) throw AnalysisError("group '" + label + "' has fewer than 2 personas; cannot stratify");
    shuffle(idx, rng);
    auto n_test = static_cast<std::size_t>(std::llround(static_cast<double>(idx.size()) * test_fraction));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t j = 0; j < n_test; ++j) is_test[idx[j]] = true;
  }
  std::pair<std::vector<Document>, std::vector<Document>> out;
  for (std::size_t i = 0; i < docs.size(); ++i) (is_test[i] ? out.second : out.first).push_back(docs[i]);
  return out;
}

OvaModel fit_ova(const std::vector<Document>& train, const SvmConfig& config) {
  if (train.empty()) throw AnalysisError("classifier: empty training set");
  if (!(config.c > 0.0)) throw ConfigError("classifier: C must be positive");
  if (config.epochs < 1) throw ConfigError("classifier: epochs must be at least 1");

  OvaModel m;
  m.config = config;
  std::set<std::string> groups, vocab;
  for (const auto& d : train) {
    groups.insert(d.label);
    vocab.insert(d.tokens.begin(), d.tokens.end());
  }
  if (vocab.empty()) throw AnalysisError("classifier: empty vocabulary after anonymization");
  m.groups.assign(groups.begin(), groups.end());
  m.vocabulary.assign(vocab.begin(), vocab.end());

  const SparseRows x = design_matrix(train, m.vocabulary);
  const auto g = static_cast<Eigen::Index>(m.groups.size());
  m.weights.resize(g, x.cols());
  m.bias.resize(g);
  for (Eigen::Index k = 0; k < g; ++k) {
    std::vector<double> y(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) y[i] = train[i].label == m.groups[k] ? 1.0 : -1.0;
    BinaryFit fit = fit_binary(x, y, config, config.seed * 1000003ULL + static_cast<std::uint64_t>(k));
    m.weights.row(k) = fit.w.transpose();
    m.bias[k] = fit.b;
    m.objective.push_back(fit.objective);
  }
  return m;
}

Eigen::VectorXd OvaModel::decision_values(const BowVector& x) const {
  Eigen::VectorXd out = bias;
  for (const auto& [w, f] : x) {
    auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), w);
    if (it == vocabulary.end() || *it != w) continue;  // unseen words are dropped
    out += f * weights.col(it - vocabulary.begin());
  }
  return out;
}

std::string OvaModel::predict(const BowVector& x) const {
  if (groups.empty()) throw AnalysisError("classifier: model is not fitted");
  Eigen::VectorXd d = decision_values(x);
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < d.size(); ++k) {
    if (d[k] > d[best]) best = k;
  }
  return groups[static_cast<std::size_t>(best)];
}

std::size_t OvaModel::group_index(std::string_view group) const {
  auto it = std::find(groups.begin(), groups.end(), group);
  if (it == groups.end()) throw AnalysisError("classifier: unknown group '" + std::string(group) + "'");
  return static_cast<std::size_t>(it - groups.begin());
}

Evaluation evaluate(const OvaModel& model, const std::vector<Document>& test) {
  if (test.empty()) throw AnalysisError("classifier: empty test set");
  Evaluation ev;
  ev.n = test.size();
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
  std::size_t correct = 0;
  for (const auto& d : test) {
    const bool ok = model.predict(bag_of_words(d.tokens)) == d.label;
    correct += ok;
    auto& t = tally[d.label];
    t.first += ok;
    ++t.second;
  }
  ev.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  for (const auto& [label, t] : tally) {
    ev.per_group_accuracy[label] = static_cast<double>(t.first) / static_cast<double>(t.second);
  }
  return ev;
}

std::vector<std::string> top_features(const OvaModel& model, std::string_view group, std::size_t k) {
  const auto row = static_cast<Eigen::Index>(model.group_index(group));
  std::vector<std::size_t> idx(model.vocabulary.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Vocabulary is sorted, so a stable sort leaves ties in lexicographic order.
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return model.weights(row, static_cast<Eigen::Index>(a)) > model.weights(row, static_cast<Eigen::Index>(b));
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < std::min(k, idx.size()); ++i) out.push_back(model.vocabulary[idx[i]]);
  return out;
}

SeedSweep evaluate_seeds(const std::vector<Document>& docs, double test_fraction, const SvmConfig& config,
                         std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw ConfigError("classifier: no evaluation seeds");
  SeedSweep out;
  for (std::uint64_t seed : seeds) {
    auto [train, test] = stratified_split(docs, test_fraction, seed);
    SvmConfig cfg = config;
    cfg.seed = seed;
    OvaModel m = fit_ova(train, cfg);
    out.seeds.push_back(seed);
    out.accuracies.push_back(evaluate(m, test).accuracy);
    if (out.seeds.size() == 1) out.first_model = std::move(m);
  }
  const double n = static_cast<double>(out.accuracies.size());
  out.mean = std::accumulate(out.accuracies.begin(), out.accuracies.end(), 0.0) / n;
  if (out.accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : out.accuracies) ss += (a - out.mean) * (a - out.mean);
    out.stddev = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

json OvaModel::to_json() const {
  json w = json::object();
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto row = static_cast<Eigen::Index>(k);
    std::vector<double> r(vocabulary.size());
    for (std::size_t j = 0; j < vocabulary.size(); ++j) r[j] = weights(row, static_cast<Eigen::Index>(j));
    w[groups[k]] = {{"weights", r}, {"bias", bias[row]}, {"objective", objective.at(k)}};
  }
  return {{"vocabulary", vocabulary},
          {"groups", groups},
          {"config", {{"c", config.c}, {"epochs", config.epochs}, {"seed", config.seed}}},
          {"classifiers", w}};
}

OvaModel OvaModel::from_json(const json& j) {
  try {
    OvaModel m;
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    m.groups = j.at("groups").get<std::vector<std::string>>();
    const auto& cfg = j.at("config");
    m.config.c = cfg.at("c").get<double>();
    m.config.epochs = cfg.at("epochs").get<int>();
    m.config.seed = cfg.at("seed").get<std::uint64_t>();
    m.weights.resize(static_cast<Eigen::Index>(m.groups.size()), static_cast<Eigen::Index>(m.vocabulary.size()));
    m.bias.resize(static_cast<Eigen::Index>(m.groups.size()));
    for (std::size_t k = 0; k < m.groups.size(); ++k) {
      const auto& c = j.at("classifiers").at(m.groups[k]);
      auto r = c.at("weights").get<std::vector<double>>();
      if (r.size() != m.vocabulary.size()) throw ConfigError("classifier model: weight vector size mismatch");
      for (std::size_t v = 0; v < r.size(); ++v) m.weights(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(v)) = r[v];
      m.bias[static_cast<Eigen::Index>(k)] = c.at("bias").get<double>();
      m.objective.push_back(c.at("objective").get<double>());
    }
    return m;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("classifier model: ") + e.what());
  }
}

}  // namespace marked
