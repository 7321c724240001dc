#pragma once

// Recursive feature elimination driven by tree feature importances.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "dtpower/model.hpp"

namespace dtpower {

struct RfeStep {
  std::size_t iteration = 0;
  std::vector<std::size_t> dropped;  // column indices of the input dataset
  double training_mae_percent = 0.0;  // fit on the features remaining before the drop
};

struct RfeResult {
  std::vector<std::size_t> retained;  // column indices, by final importance (descending)
  std::vector<std::string> retained_ids;
  std::vector<double> retained_importance;
  std::vector<RfeStep> history;
};

inline std::size_t rfe_target_count(std::size_t n_features, double target_fraction) {
  // The small slack keeps e.g. 0.2 * 100 from rounding up to 21.
  auto t = static_cast<std::size_t>(
      std::ceil(target_fraction * static_cast<double>(n_features) - 1e-9));
  return std::clamp<std::size_t>(t, 1, n_features);
}

// Each iteration fits a tree on the remaining columns and drops the least
// important 10% of them (at least one, and every zero-importance column),
// never going below ceil(target_fraction * n_features). Importance ties drop
// the higher column index first.
inline RfeResult rfe(const Dataset& ds, const HyperParams& hp, double target_fraction = 0.2) {
  require(!ds.empty(), "rfe: empty dataset");
  require(ds.n_features() >= 2, "rfe: need at least two features");
  require(target_fraction > 0.0 && target_fraction <= 1.0,
          "rfe: target_fraction must be in (0, 1]");
  const std::size_t target = rfe_target_count(ds.n_features(), target_fraction);

  std::vector<std::size_t> remaining(ds.n_features());
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  const auto truth = ds.targets();

  RfeResult result;
  auto ranked = [&](const std::vector<std::size_t>& cols, const std::vector<double>& imp) {
    std::vector<std::size_t> order(cols.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (imp[a] != imp[b]) return imp[a] < imp[b];
      return cols[a] > cols[b];
    });
    return order;  // least important first
  };

  std::size_t iteration = 0;
  while (remaining.size() > target) {
    const auto sub = ds.select_features(remaining);
    const auto tree = fit_tree(sub, hp);
    const auto imp = feature_importances(tree);
    const auto pred = predict_tree(tree, sub);

    const std::size_t zeros =
        static_cast<std::size_t>(std::count(imp.begin(), imp.end(), 0.0));
    std::size_t n_drop = std::max<std::size_t>(1, remaining.size() / 10);
    n_drop = std::max(n_drop, zeros);
    n_drop = std::min(n_drop, remaining.size() - target);

    const auto order = ranked(remaining, imp);
    RfeStep step;
    step.iteration = iteration++;
    step.training_mae_percent = mae_percent(pred, truth);
    std::vector<char> drop(remaining.size(), 0);
    for (std::size_t k = 0; k < n_drop; ++k) {
      drop[order[k]] = 1;
      step.dropped.push_back(remaining[order[k]]);
    }
    std::vector<std::size_t> next;
    for (std::size_t i = 0; i < remaining.size(); ++i)
      if (!drop[i]) next.push_back(remaining[i]);
    remaining = std::move(next);
    result.history.push_back(std::move(step));
  }

  const auto sub = ds.select_features(remaining);
  const auto imp = feature_importances(fit_tree(sub, hp));
  auto order = ranked(remaining, imp);
  std::reverse(order.begin(), order.end());
  for (auto i : order) {
    result.retained.push_back(remaining[i]);
    result.retained_ids.push_back(ds.feature_names[remaining[i]]);
    result.retained_importance.push_back(imp[i]);
  }
  return result;
}

// iteration,dropped,training_mae_pct  (dropped ids separated by ';')
inline std::string rfe_history_csv(const RfeResult& r, const std::vector<std::string>& names) {
  std::string out = "iteration,dropped,training_mae_pct\n";
  for (const auto& s : r.history) {
    out += std::to_string(s.iteration) + ",";
    for (std::size_t k = 0; k < s.dropped.size(); ++k) {
      if (k) out += ';';
      out += names.at(s.dropped[k]);
    }
    out += "," + format_double(s.training_mae_percent) + "\n";
  }
  return out;
}

}  // namespace dtpower
