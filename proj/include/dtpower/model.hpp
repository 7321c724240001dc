#pragma once

// CART regression trees, the least-squares baseline, frequency scaling,
// additive ensembles and the MAE% metric.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "dtpower/common.hpp"
#include "dtpower/workload.hpp"

namespace dtpower {

struct HyperParams {
  std::size_t max_depth = 6;
  std::size_t min_split_sample = 5;
  std::size_t min_leaf_sample = 5;
  // A node is split only if node_variance / root_variance >= this value.
  double min_leaf_impurity = 0.001;

  void validate() const {
    require(max_depth >= 1, "HyperParams: max_depth must be >= 1");
    require(min_split_sample >= 2, "HyperParams: min_split_sample must be >= 2");
    require(min_leaf_sample >= 1, "HyperParams: min_leaf_sample must be >= 1");
    require(min_leaf_impurity >= 0.0 && min_leaf_impurity < 1.0,
            "HyperParams: min_leaf_impurity must be in [0, 1)");
  }

  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

inline void to_json(nlohmann::json& j, const HyperParams& hp) {
  j = nlohmann::json{{"max_depth", hp.max_depth},
                     {"min_split_sample", hp.min_split_sample},
                     {"min_leaf_sample", hp.min_leaf_sample},
                     {"min_leaf_impurity", hp.min_leaf_impurity}};
}

inline void from_json(const nlohmann::json& j, HyperParams& hp) {
  j.at("max_depth").get_to(hp.max_depth);
  j.at("min_split_sample").get_to(hp.min_split_sample);
  j.at("min_leaf_sample").get_to(hp.min_leaf_sample);
  j.at("min_leaf_impurity").get_to(hp.min_leaf_impurity);
}

struct TreeNode {
  bool is_leaf = true;
  // decision fields
  std::uint32_t feature = 0;
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  double impurity_decrease = 0.0;  // watts^2
  // shared
  double value = 0.0;     // mean target of the node (the prediction for leaves)
  std::size_t n_samples = 0;
  double impurity = 0.0;  // population variance, watts^2
  std::size_t depth = 0;
};

// Nodes are kept in pre-order; index 0 is the root.
struct DecisionTree {
  std::vector<TreeNode> nodes;
  std::size_t depth = 0;
  std::size_t n_features = 0;
  double model_freq = 0.0;
  std::vector<std::string> feature_ids;

  const TreeNode& root() const { return nodes.front(); }
};

struct Split {
  double threshold = 0.0;
  double impurity_decrease = 0.0;  // watts^2
};

namespace detail {

// Relative slack used when comparing impurity decreases so that candidates
// that are equal in exact arithmetic compare equal after rounding.
inline constexpr double kSplitTolerance = 1e-10;

struct NodeStats {
  double mean = 0.0;
  double variance = 0.0;
};

inline NodeStats stats_of(std::span<const std::uint32_t> rows, std::span<const double> y) {
  NodeStats s;
  if (rows.empty()) return s;
  const double first = y[rows.front()];
  if (std::all_of(rows.begin(), rows.end(), [&](std::uint32_t r) { return y[r] == first; })) {
    s.mean = first;
    return s;
  }
  double sum = 0.0;
  for (auto r : rows) sum += y[r];
  s.mean = sum / static_cast<double>(rows.size());
  double ss = 0.0;
  for (auto r : rows) {
    double d = y[r] - s.mean;
    ss += d * d;
  }
  s.variance = ss / static_cast<double>(rows.size());
  return s;
}

// Scans one feature whose node rows are already sorted by value. Targets are
// centred on the node mean before accumulation.
inline std::optional<Split> scan_sorted(std::span<const std::uint32_t> sorted_rows,
                                        std::span<const Count> x, std::span<const double> y,
                                        const NodeStats& node, std::size_t min_leaf) {
  const std::size_t n = sorted_rows.size();
  if (n < 2 || node.variance <= 0.0) return std::nullopt;
  const double tol = kSplitTolerance * node.variance;
  double total = 0.0;
  for (auto r : sorted_rows) total += y[r] - node.mean;
  std::optional<Split> best;
  double left_sum = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    left_sum += y[sorted_rows[i]] - node.mean;
    const Count xi = x[sorted_rows[i]];
    const Count xn = x[sorted_rows[i + 1]];
    if (xi == xn) continue;
    const std::size_t nl = i + 1;
    const std::size_t nr = n - nl;
    if (nl < min_leaf || nr < min_leaf) continue;
    const double right_sum = total - left_sum;
    const double dec = (left_sum * left_sum / static_cast<double>(nl) +
                        right_sum * right_sum / static_cast<double>(nr) -
                        total * total / static_cast<double>(n)) /
                       static_cast<double>(n);
    if (dec <= tol) continue;
    if (!best || dec > best->impurity_decrease + tol) {
      best = Split{(static_cast<double>(xi) + static_cast<double>(xn)) / 2.0, dec};
    }
  }
  return best;
}

}  // namespace detail

// Best `x <= threshold` split of (x, y) by variance reduction. Candidate
// thresholds are midpoints of consecutive distinct values; ties keep the
// lowest threshold. Empty if no split reduces the variance.
inline std::optional<Split> best_split(std::span<const Count> x, std::span<const double> y,
                                       std::size_t min_leaf = 1) {
  require(x.size() == y.size(), "best_split: x and y differ in length");
  if (x.size() < 2) return std::nullopt;
  std::vector<std::uint32_t> rows(x.size());
  std::iota(rows.begin(), rows.end(), 0u);
  std::stable_sort(rows.begin(), rows.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return x[a] < x[b]; });
  auto node = detail::stats_of(rows, y);
  return detail::scan_sorted(rows, x, y, node, std::max<std::size_t>(1, min_leaf));
}

namespace detail {

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& ds, const HyperParams& hp) : hp_(hp) {
    const std::size_t n = ds.size();
    const std::size_t f = ds.n_features();
    cols_.assign(f, std::vector<Count>(n));
    y_.resize(n);
    for (std::size_t r = 0; r < n; ++r) {
      const auto& s = ds.samples[r];
      require(s.features.size() == f, "fit_tree: sample dimensionality mismatch");
      for (std::size_t c = 0; c < f; ++c) cols_[c][r] = s.features[c];
      y_[r] = s.true_dynamic_power;
    }
    goes_left_.assign(n, 0);
  }

  DecisionTree build() {
    const std::size_t n = y_.size();
    std::vector<std::vector<std::uint32_t>> sorted(cols_.size());
    for (std::size_t c = 0; c < cols_.size(); ++c) {
      auto& rows = sorted[c];
      rows.resize(n);
      std::iota(rows.begin(), rows.end(), 0u);
      const auto& col = cols_[c];
      std::stable_sort(rows.begin(), rows.end(),
                       [&](std::uint32_t a, std::uint32_t b) { return col[a] < col[b]; });
    }
    std::vector<std::uint32_t> all(n);
    std::iota(all.begin(), all.end(), 0u);
    root_variance_ = stats_of(all, y_).variance;
    grow(std::move(all), std::move(sorted), 0);

    DecisionTree tree;
    tree.nodes = std::move(nodes_);
    tree.depth = depth_;
    tree.n_features = cols_.size();
    return tree;
  }

 private:
  // rows: node members in ascending index order; sorted[c]: members by feature c.
  std::uint32_t grow(std::vector<std::uint32_t> rows,
                     std::vector<std::vector<std::uint32_t>> sorted, std::size_t depth) {
    const auto id = static_cast<std::uint32_t>(nodes_.size());
    nodes_.emplace_back();
    depth_ = std::max(depth_, depth);
    const auto stats = stats_of(rows, y_);
    {
      TreeNode& node = nodes_[id];
      node.value = stats.mean;
      node.impurity = stats.variance;
      node.n_samples = rows.size();
      node.depth = depth;
    }

    bool stop = depth >= hp_.max_depth || rows.size() < hp_.min_split_sample ||
                stats.variance <= 0.0 ||
                stats.variance / root_variance_ < hp_.min_leaf_impurity;
    std::optional<Split> best;
    std::uint32_t best_feature = 0;
    if (!stop) {
      const double tol = kSplitTolerance * stats.variance;
      for (std::size_t c = 0; c < cols_.size(); ++c) {
        auto s = scan_sorted(sorted[c], cols_[c], y_, stats, hp_.min_leaf_sample);
        if (s && (!best || s->impurity_decrease > best->impurity_decrease + tol)) {
          best = s;
          best_feature = static_cast<std::uint32_t>(c);
        }
      }
    }
    if (!best) return id;

    const auto& col = cols_[best_feature];
    for (auto r : rows) goes_left_[r] = col[r] <= best->threshold ? 1 : 0;
    auto partition = [&](const std::vector<std::uint32_t>& src,
                         std::vector<std::uint32_t>& l, std::vector<std::uint32_t>& r) {
      for (auto i : src) (goes_left_[i] ? l : r).push_back(i);
    };
    std::vector<std::uint32_t> lrows, rrows;
    partition(rows, lrows, rrows);
    std::vector<std::vector<std::uint32_t>> lsorted(cols_.size()), rsorted(cols_.size());
    for (std::size_t c = 0; c < cols_.size(); ++c) {
      lsorted[c].reserve(lrows.size());
      rsorted[c].reserve(rrows.size());
      partition(sorted[c], lsorted[c], rsorted[c]);
    }
    rows.clear();
    rows.shrink_to_fit();
    sorted.clear();

    auto left = grow(std::move(lrows), std::move(lsorted), depth + 1);
    auto right = grow(std::move(rrows), std::move(rsorted), depth + 1);
    TreeNode& node = nodes_[id];
    node.is_leaf = false;
    node.feature = best_feature;
    node.threshold = best->threshold;
    node.impurity_decrease = best->impurity_decrease;
    node.left = left;
    node.right = right;
    return id;
  }

  HyperParams hp_;
  std::vector<std::vector<Count>> cols_;
  std::vector<double> y_;
  std::vector<std::uint8_t> goes_left_;
  std::vector<TreeNode> nodes_;
  double root_variance_ = 0.0;
  std::size_t depth_ = 0;
};

}  // namespace detail

// Greedy top-down CART with the four stopping rules of HyperParams. Features
// are tried in column order; a later feature wins only if strictly better.
inline DecisionTree fit_tree(const Dataset& ds, const HyperParams& hp) {
  require(!ds.empty(), "fit_tree: empty dataset");
  hp.validate();
  DecisionTree tree = detail::TreeBuilder(ds, hp).build();
  tree.model_freq = ds.clock_freq;
  tree.feature_ids = ds.feature_names;
  return tree;
}

// Index of the leaf reached by `features`.
inline std::size_t leaf_index(const DecisionTree& tree, std::span<const Count> features) {
  require(features.size() == tree.n_features, "predict_tree: feature dimensionality mismatch");
  std::size_t i = 0;
  while (!tree.nodes[i].is_leaf) {
    const auto& n = tree.nodes[i];
    i = static_cast<double>(features[n.feature]) <= n.threshold ? n.left : n.right;
  }
  return i;
}

inline double predict_tree(const DecisionTree& tree, std::span<const Count> features) {
  return tree.nodes[leaf_index(tree, features)].value;
}

inline std::vector<double> predict_tree(const DecisionTree& tree, const Dataset& ds) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) out.push_back(predict_tree(tree, s.features));
  return out;
}

// Normalized Gini (impurity-decrease) importance per feature.
inline std::vector<double> feature_importances(const DecisionTree& tree) {
  std::vector<double> imp(tree.n_features, 0.0);
  if (tree.nodes.empty()) return imp;
  const double n_root = static_cast<double>(tree.root().n_samples);
  for (const auto& n : tree.nodes) {
    if (n.is_leaf) continue;
    imp[n.feature] += static_cast<double>(n.n_samples) / n_root * n.impurity_decrease;
  }
  const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
  if (total > 0.0)
    for (auto& v : imp) v /= total;
  return imp;
}

// ---- linear baseline ------------------------------------------------------

struct LinearModel {
  std::vector<double> weights;  // watts per count
  double intercept = 0.0;
  double model_freq = 0.0;
  std::vector<std::string> feature_ids;
  bool ridge_fallback = false;
};

// Ordinary least squares on raw activity counts. A rank-deficient design
// matrix falls back to normal equations with a 1e-8 ridge on the weights (not
// the intercept), scaled by the mean feature diagonal of X^T X.
inline LinearModel fit_linear(const Dataset& ds) {
  require(!ds.empty(), "fit_linear: empty dataset");
  const std::size_t n = ds.size();
  const std::size_t f = ds.n_features();
  require(n > f, "fit_linear: need more samples than features");
  Eigen::MatrixXd x(n, f + 1);
  Eigen::VectorXd y(n);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& s = ds.samples[r];
    for (std::size_t c = 0; c < f; ++c)
      x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = s.features[c];
    x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) = 1.0;
    y(static_cast<Eigen::Index>(r)) = s.true_dynamic_power;
  }
  LinearModel m;
  m.model_freq = ds.clock_freq;
  m.feature_ids = ds.feature_names;
  Eigen::VectorXd w;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() == static_cast<Eigen::Index>(f + 1)) {
    w = qr.solve(y);
  } else {
    Eigen::MatrixXd a = x.transpose() * x;
    const auto fi = static_cast<Eigen::Index>(f);
    const double lambda = 1e-8 * a.diagonal().head(fi).mean();
    a.diagonal().head(fi).array() += lambda;
    w = a.ldlt().solve(x.transpose() * y);
    m.ridge_fallback = true;
  }
  m.weights.assign(w.data(), w.data() + f);
  m.intercept = w(static_cast<Eigen::Index>(f));
  return m;
}

inline double predict_linear(const LinearModel& m, std::span<const Count> features) {
  require(features.size() == m.weights.size(),
          "predict_linear: feature dimensionality mismatch");
  double p = m.intercept;
  for (std::size_t i = 0; i < features.size(); ++i)
    p += m.weights[i] * static_cast<double>(features[i]);
  return p;
}

inline std::vector<double> predict_linear(const LinearModel& m, const Dataset& ds) {
  std::vector<double> out;
  out.reserve(ds.size());
  for (const auto& s : ds.samples) out.push_back(predict_linear(m, s.features));
  return out;
}

// ---- scaling, ensembles, metric --------------------------------------------

// Dynamic power is proportional to f, so an estimate made by a model trained
// at model_freq is rescaled by current_freq / model_freq.
inline double scale_prediction(double power, double model_freq, double current_freq) {
  require(model_freq > 0.0 && current_freq > 0.0,
          "scale_prediction: frequencies must be positive");
  return power * (current_freq / model_freq);
}

// Independently trained trees whose predictions add up. Each component reads
// its own feature vector; components may not share feature ids.
class EnsembleModel {
 public:
  EnsembleModel() = default;

  explicit EnsembleModel(std::vector<DecisionTree> components)
      : components_(std::move(components)) {
    std::set<std::string> seen;
    for (const auto& t : components_)
      for (const auto& id : t.feature_ids)
        if (!seen.insert(id).second)
          throw InvalidArgument("EnsembleModel: feature '" + id +
                                "' is consumed by more than one component");
  }

  const std::vector<DecisionTree>& components() const { return components_; }
  std::size_t size() const { return components_.size(); }

 private:
  std::vector<DecisionTree> components_;
};

inline double predict_ensemble(const EnsembleModel& em,
                               std::span<const std::span<const Count>> per_component) {
  require(per_component.size() == em.size(), "predict_ensemble: component count mismatch");
  double p = 0.0;
  for (std::size_t i = 0; i < em.size(); ++i)
    p += predict_tree(em.components()[i], per_component[i]);
  return p;
}

// 100 * mean|pred - truth| / mean(truth)
inline double mae_percent(std::span<const double> predictions, std::span<const double> truths) {
  require(!truths.empty(), "mae_percent: empty input");
  require(predictions.size() == truths.size(), "mae_percent: length mismatch");
  double abs_err = 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    abs_err += std::abs(predictions[i] - truths[i]);
    total += truths[i];
  }
  require(total > 0.0, "mae_percent: mean of truths must be positive");
  return 100.0 * abs_err / total;
}

// ---- serialization -------------------------------------------------------

inline nlohmann::json tree_to_json(const DecisionTree& t) {
  nlohmann::json j;
  j["format"] = "dtpower-tree";
  j["version"] = 1;
  j["model_freq"] = t.model_freq;
  j["n_features"] = t.n_features;
  j["depth"] = t.depth;
  j["feature_ids"] = t.feature_ids;
  auto& nodes = j["nodes"] = nlohmann::json::array();
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const auto& n = t.nodes[i];
    nlohmann::json e{{"id", i},
                     {"depth", n.depth},
                     {"n_samples", n.n_samples},
                     {"impurity", n.impurity},
                     {"value", n.value}};
    if (n.is_leaf) {
      e["kind"] = "leaf";
    } else {
      e["kind"] = "decision";
      e["feature"] = n.feature;
      e["feature_id"] = t.feature_ids.empty() ? "" : t.feature_ids[n.feature];
      e["threshold"] = n.threshold;
      e["left"] = n.left;
      e["right"] = n.right;
      e["impurity_decrease"] = n.impurity_decrease;
    }
    nodes.push_back(std::move(e));
  }
  return j;
}

inline DecisionTree tree_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dtpower-tree") throw ConfigError("not a dtpower tree document");
    DecisionTree t;
    j.at("model_freq").get_to(t.model_freq);
    j.at("n_features").get_to(t.n_features);
    j.at("depth").get_to(t.depth);
    j.at("feature_ids").get_to(t.feature_ids);
    for (const auto& e : j.at("nodes")) {
      if (e.at("id").get<std::size_t>() != t.nodes.size())
        throw ConfigError("tree document: node ids must be consecutive");
      TreeNode n;
      e.at("depth").get_to(n.depth);
      e.at("n_samples").get_to(n.n_samples);
      e.at("impurity").get_to(n.impurity);
      e.at("value").get_to(n.value);
      n.is_leaf = e.at("kind") == "leaf";
      if (!n.is_leaf) {
        e.at("feature").get_to(n.feature);
        e.at("threshold").get_to(n.threshold);
        e.at("left").get_to(n.left);
        e.at("right").get_to(n.right);
        e.at("impurity_decrease").get_to(n.impurity_decrease);
      }
      t.nodes.push_back(n);
    }
    if (t.nodes.empty()) throw ConfigError("tree document: no nodes");
    for (const auto& n : t.nodes) {
      if (n.is_leaf) continue;
      if (n.left >= t.nodes.size() || n.right >= t.nodes.size() || n.feature >= t.n_features)
        throw ConfigError("tree document: index out of range");
    }
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("tree document: ") + e.what());
  }
}

inline nlohmann::json linear_to_json(const LinearModel& m) {
  return {{"format", "dtpower-linear"},
          {"version", 1},
          {"model_freq", m.model_freq},
          {"feature_ids", m.feature_ids},
          {"weights", m.weights},
          {"intercept", m.intercept},
          {"ridge_fallback", m.ridge_fallback}};
}

inline LinearModel linear_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "dtpower-linear") throw ConfigError("not a dtpower linear document");
    LinearModel m;
    j.at("model_freq").get_to(m.model_freq);
    j.at("feature_ids").get_to(m.feature_ids);
    j.at("weights").get_to(m.weights);
    j.at("intercept").get_to(m.intercept);
    j.at("ridge_fallback").get_to(m.ridge_fallback);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("linear document: ") + e.what());
  }
}

// Nested if/else rule text, one statement per line:
//   if (n12 <= 40.5) {
//     return 0.125;
//   } else {
//     ...
//   }
inline std::string export_rules(const DecisionTree& t) {
  std::string out;
  auto name = [&](std::uint32_t f) {
    return t.feature_ids.size() == t.n_features ? t.feature_ids[f]
                                                : "x" + std::to_string(f);
  };
  auto emit = [&](auto&& self, std::size_t i, std::size_t indent) -> void {
    const std::string pad(indent * 2, ' ');
    const auto& n = t.nodes[i];
    if (n.is_leaf) {
      out += pad + "return " + format_double(n.value) + ";\n";
      return;
    }
    out += pad + "if (" + name(n.feature) + " <= " + format_double(n.threshold) + ") {\n";
    self(self, n.left, indent + 1);
    out += pad + "} else {\n";
    self(self, n.right, indent + 1);
    out += pad + "}\n";
  };
  emit(emit, 0, 0);
  return out;
}

}  // namespace dtpower
