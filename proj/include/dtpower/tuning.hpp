#pragma once

// k-fold cross-validated grid search over the tree hyper-parameters and
// learning-curve generation for the tree and linear models.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "dtpower/model.hpp"

namespace dtpower {

struct Grid {
  std::vector<std::size_t> max_depth;
  std::vector<std::size_t> min_split_sample;
  std::vector<std::size_t> min_leaf_sample;
  std::vector<double> min_leaf_impurity;

  void validate() const {
    require(!max_depth.empty() && !min_split_sample.empty() && !min_leaf_sample.empty() &&
                !min_leaf_impurity.empty(),
            "Grid: every parameter set must be non-empty");
  }

  std::size_t size() const {
    return max_depth.size() * min_split_sample.size() * min_leaf_sample.size() *
           min_leaf_impurity.size();
  }

  // max_depth varies slowest, min_leaf_impurity fastest.
  std::vector<HyperParams> combinations() const {
    validate();
    std::vector<HyperParams> out;
    out.reserve(size());
    for (auto d : max_depth)
      for (auto s : min_split_sample)
        for (auto l : min_leaf_sample)
          for (auto i : min_leaf_impurity) out.push_back({d, s, l, i});
    return out;
  }
};

// The 6 x 4 x 4 x 6 search space used for the benchmark designs.
inline Grid default_grid() {
  return Grid{{3, 4, 5, 6, 7, 8},
              {5, 10, 15, 20},
              {5, 10, 15, 20},
              {0.001, 0.01, 0.02, 0.03, 0.04, 0.05}};
}

inline void to_json(nlohmann::json& j, const Grid& g) {
  j = nlohmann::json{{"max_depth", g.max_depth},
                     {"min_split_sample", g.min_split_sample},
                     {"min_leaf_sample", g.min_leaf_sample},
                     {"min_leaf_impurity", g.min_leaf_impurity}};
}

inline void from_json(const nlohmann::json& j, Grid& g) {
  j.at("max_depth").get_to(g.max_depth);
  j.at("min_split_sample").get_to(g.min_split_sample);
  j.at("min_leaf_sample").get_to(g.min_leaf_sample);
  j.at("min_leaf_impurity").get_to(g.min_leaf_impurity);
}

// Shuffled partition of 0..n-1 into k folds whose sizes differ by at most one
// (the first n % k folds get the extra element). Each fold is sorted.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n_samples, std::size_t k,
                                                         std::uint64_t seed) {
  require(k >= 2, "kfold_split: k must be >= 2");
  require(k <= n_samples, "kfold_split: k exceeds sample count");
  std::vector<std::size_t> idx(n_samples);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(idx, rng);
  std::vector<std::vector<std::size_t>> folds(k);
  const std::size_t base = n_samples / k;
  const std::size_t extra = n_samples % k;
  std::size_t pos = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(folds[f].begin(), folds[f].end());
    pos += len;
  }
  return folds;
}

// Training rows for validation fold v: the other folds concatenated in order.
inline std::vector<std::size_t> fold_training_rows(
    const std::vector<std::vector<std::size_t>>& folds, std::size_t v) {
  std::vector<std::size_t> rows;
  for (std::size_t f = 0; f < folds.size(); ++f)
    if (f != v) rows.insert(rows.end(), folds[f].begin(), folds[f].end());
  return rows;
}

struct CvRow {
  HyperParams hp;
  std::vector<double> fold_scores;  // validation MAE% per fold
  double mean_score = 0.0;
};

struct CvResult {
  std::vector<CvRow> rows;
  HyperParams best;
  double best_score = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;
  DecisionTree final_model;  // best hp refit on every sample of the dataset
};

namespace detail {

template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
}

inline std::size_t default_threads() {
  return std::max(1u, std::thread::hardware_concurrency());
}

// true if a should replace b as the best row: lower score, then shallower
// tree, then larger min_leaf_impurity.
inline bool better_row(const CvRow& a, const CvRow& b) {
  if (a.mean_score != b.mean_score) return a.mean_score < b.mean_score;
  if (a.hp.max_depth != b.hp.max_depth) return a.hp.max_depth < b.hp.max_depth;
  return a.hp.min_leaf_impurity > b.hp.min_leaf_impurity;
}

}  // namespace detail

inline CvResult grid_search_cv(const Dataset& ds, const Grid& grid, std::size_t k = 10,
                               std::uint64_t seed = 0,
                               std::size_t threads = detail::default_threads()) {
  require(ds.size() >= k, "grid_search_cv: dataset smaller than k");
  const auto combos = grid.combinations();

  CvResult result;
  result.seed = seed;
  result.folds = kfold_split(ds.size(), k, seed);
  std::vector<Dataset> train(k), valid(k);
  std::vector<std::vector<double>> valid_truth(k);
  for (std::size_t v = 0; v < k; ++v) {
    train[v] = ds.subset(fold_training_rows(result.folds, v));
    valid[v] = ds.subset(result.folds[v]);
    valid_truth[v] = valid[v].targets();
  }

  result.rows.resize(combos.size());
  detail::parallel_for(combos.size(), threads, [&](std::size_t c) {
    CvRow row;
    row.hp = combos[c];
    for (std::size_t v = 0; v < k; ++v) {
      const auto tree = fit_tree(train[v], row.hp);
      row.fold_scores.push_back(mae_percent(predict_tree(tree, valid[v]), valid_truth[v]));
    }
    row.mean_score = std::accumulate(row.fold_scores.begin(), row.fold_scores.end(), 0.0) /
                     static_cast<double>(k);
    result.rows[c] = std::move(row);
  });

  std::size_t best = 0;
  for (std::size_t c = 1; c < result.rows.size(); ++c)
    if (detail::better_row(result.rows[c], result.rows[best])) best = c;
  result.best = result.rows[best].hp;
  result.best_score = result.rows[best].mean_score;
  result.final_model = fit_tree(ds, result.best);
  return result;
}

struct LearningCurvePoint {
  std::size_t size = 0;
  double tree_train = 0.0;
  double tree_validation = 0.0;
  // NaN when size does not exceed the feature count.
  double linear_train = std::numeric_limits<double>::quiet_NaN();
  double linear_validation = std::numeric_limits<double>::quiet_NaN();
};

// For each size, every fold trains on the first `size` of its training rows
// (all of them if fewer) and the MAE% values are averaged over the k folds.
inline std::vector<LearningCurvePoint> learning_curve(const Dataset& ds, const HyperParams& hp,
                                                      const std::vector<std::size_t>& sizes,
                                                      std::size_t k = 10,
                                                      std::uint64_t seed = 0) {
  require(std::is_sorted(sizes.begin(), sizes.end()), "learning_curve: sizes must ascend");
  for (auto s : sizes)
    require(s >= 1 && s <= ds.size(), "learning_curve: size out of range");
  const auto folds = kfold_split(ds.size(), k, seed);
  std::vector<LearningCurvePoint> out;
  for (auto size : sizes) {
    LearningCurvePoint pt;
    pt.size = size;
    const bool with_linear = size > ds.n_features();
    double lt = 0.0, lv = 0.0;
    for (std::size_t v = 0; v < k; ++v) {
      auto rows = fold_training_rows(folds, v);
      if (rows.size() > size) rows.resize(size);
      const auto train = ds.subset(rows);
      const auto valid = ds.subset(folds[v]);
      const auto ytr = train.targets();
      const auto yva = valid.targets();
      const auto tree = fit_tree(train, hp);
      pt.tree_train += mae_percent(predict_tree(tree, train), ytr);
      pt.tree_validation += mae_percent(predict_tree(tree, valid), yva);
      if (with_linear && train.size() > train.n_features()) {
        const auto lin = fit_linear(train);
        lt += mae_percent(predict_linear(lin, train), ytr);
        lv += mae_percent(predict_linear(lin, valid), yva);
      }
    }
    const double kk = static_cast<double>(k);
    pt.tree_train /= kk;
    pt.tree_validation /= kk;
    if (with_linear) {
      pt.linear_train = lt / kk;
      pt.linear_validation = lv / kk;
    }
    out.push_back(pt);
  }
  return out;
}

inline std::string cv_table_csv(const CvResult& r) {
  std::string out = "max_depth,min_split_sample,min_leaf_sample,min_leaf_impurity,mean_val_mae_pct";
  const std::size_t k = r.folds.size();
  for (std::size_t f = 0; f < k; ++f) out += ",fold" + std::to_string(f);
  out += '\n';
  for (const auto& row : r.rows) {
    out += std::to_string(row.hp.max_depth) + "," + std::to_string(row.hp.min_split_sample) +
           "," + std::to_string(row.hp.min_leaf_sample) + "," +
           format_double(row.hp.min_leaf_impurity) + "," + format_double(row.mean_score);
    for (auto s : row.fold_scores) out += "," + format_double(s);
    out += '\n';
  }
  return out;
}

inline std::string learning_curve_csv(const std::vector<LearningCurvePoint>& pts) {
  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  std::string out = "size,tree_train_mae_pct,tree_val_mae_pct,linear_train_mae_pct,linear_val_mae_pct\n";
  for (const auto& p : pts)
    out += std::to_string(p.size) + "," + num(p.tree_train) + "," + num(p.tree_validation) +
           "," + num(p.linear_train) + "," + num(p.linear_validation) + "\n";
  return out;
}

}  // namespace dtpower
