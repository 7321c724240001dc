#include <gtest/gtest.h>

#include <set>

#include "dtpower/tuning.hpp"
#include "oracles.hpp"

using namespace dtpower;

TEST(Grid, DefaultGridSize) {
  const auto g = default_grid();
  EXPECT_EQ(g.size(), 576u);
  const auto c = g.combinations();
  EXPECT_EQ(c.size(), 576u);
  EXPECT_EQ(c.front(), (HyperParams{3, 5, 5, 0.001}));
  EXPECT_EQ(c.back(), (HyperParams{8, 20, 20, 0.05}));
  EXPECT_THROW(Grid{}.validate(), InvalidArgument);
}

TEST(Grid, JsonRoundTrip) {
  const auto g = default_grid();
  const auto back = nlohmann::json(g).get<Grid>();
  EXPECT_EQ(back.combinations(), g.combinations());
}

TEST(KFold, SingletonsAndEvenFolds) {
  const auto s = kfold_split(10, 10, 3);
  for (const auto& f : s) EXPECT_EQ(f.size(), 1u);
  const auto t = kfold_split(2000, 10, 3);
  for (const auto& f : t) EXPECT_EQ(f.size(), 200u);
  EXPECT_THROW(kfold_split(5, 10, 1), InvalidArgument);
  EXPECT_THROW(kfold_split(5, 1, 1), InvalidArgument);
}

TEST(KFold, PartitionProperty) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 2 + uniform_below(rng, 12);
    const std::size_t n = k + uniform_below(rng, 200);
    const auto folds = kfold_split(n, k, trial);
    ASSERT_EQ(folds.size(), k);
    std::set<std::size_t> all;
    std::size_t lo = n, hi = 0;
    for (const auto& f : folds) {
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
      for (auto i : f) EXPECT_TRUE(all.insert(i).second);
    }
    EXPECT_EQ(all.size(), n);
    EXPECT_EQ(*all.rbegin(), n - 1);
    EXPECT_LE(hi - lo, 1u);
  }
  EXPECT_EQ(kfold_split(50, 5, 9), kfold_split(50, 5, 9));
  EXPECT_NE(kfold_split(50, 5, 9), kfold_split(50, 5, 10));
}

TEST(KFold, TrainingRowsExcludeValidationFold) {
  const auto folds = kfold_split(37, 5, 4);
  for (std::size_t v = 0; v < folds.size(); ++v) {
    const auto rows = fold_training_rows(folds, v);
    EXPECT_EQ(rows.size(), 37 - folds[v].size());
    for (auto r : rows) EXPECT_FALSE(std::binary_search(folds[v].begin(), folds[v].end(), r));
  }
}

TEST(GridSearch, SingleCombination) {
  const auto ds = oracle::planted_dataset(100, 3);
  const Grid g{{4}, {10}, {5}, {0.01}};
  const auto r = grid_search_cv(ds, g, 5, 1);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.best, (HyperParams{4, 10, 5, 0.01}));
  EXPECT_EQ(r.rows[0].fold_scores.size(), 5u);
  EXPECT_EQ(r.best_score, r.rows[0].mean_score);
}

TEST(GridSearch, PicksDepthNeededForTwoLevelTarget) {
  // y depends on an interaction of two thresholds: depth 1 cannot fit it.
  Rng rng(6);
  std::vector<std::vector<Count>> x;
  std::vector<double> y;
  for (int i = 0; i < 200; ++i) {
    const auto a = static_cast<Count>(uniform_below(rng, 10));
    const auto b = static_cast<Count>(uniform_below(rng, 10));
    x.push_back({a, b});
    y.push_back(a < 5 ? (b < 5 ? 1.0 : 3.0) : (b < 5 ? 5.0 : 2.0));
  }
  const auto ds = oracle::make_dataset(x, y);
  const auto r = grid_search_cv(ds, Grid{{1, 6}, {2}, {1}, {0.0}}, 10, 2);
  EXPECT_EQ(r.best.max_depth, 6u);
  EXPECT_LT(r.best_score, 1e-9);
}

TEST(GridSearch, TiesPreferShallowThenLargerImpurity) {
  // Perfect fits at every setting: ties everywhere.
  const auto ds = oracle::make_dataset({{1}, {2}, {3}, {4}, {5}, {6}, {7}, {8}, {9}, {10}},
                                       {1, 1, 1, 1, 1, 2, 2, 2, 2, 2});
  const auto r = grid_search_cv(ds, Grid{{2, 1, 3}, {2}, {1}, {0.0, 0.01}}, 5, 3);
  EXPECT_EQ(r.best.max_depth, 1u);
  EXPECT_EQ(r.best.min_leaf_impurity, 0.01);
}

TEST(GridSearch, DeterministicAndThreadIndependent) {
  const auto ds = oracle::planted_dataset(200, 4);
  const Grid g{{3, 5}, {5, 10}, {5}, {0.001, 0.02}};
  const auto a = grid_search_cv(ds, g, 5, 11, 1);
  const auto b = grid_search_cv(ds, g, 5, 11, 4);
  EXPECT_EQ(cv_table_csv(a), cv_table_csv(b));
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(tree_to_json(a.final_model).dump(), tree_to_json(b.final_model).dump());
  // the final model is refit on every row
  EXPECT_EQ(a.final_model.root().n_samples, ds.size());
}

TEST(GridSearch, ScoreIsMeanOfIndependentFoldFits) {
  const auto ds = oracle::planted_dataset(120, 9);
  const HyperParams hp{4, 5, 5, 0.001};
  const auto r = grid_search_cv(ds, Grid{{4}, {5}, {5}, {0.001}}, 6, 21);
  double total = 0;
  for (std::size_t v = 0; v < 6; ++v) {
    const auto tr = ds.subset(fold_training_rows(r.folds, v));
    const auto va = ds.subset(r.folds[v]);
    const double s = mae_percent(predict_tree(fit_tree(tr, hp), va), va.targets());
    EXPECT_EQ(s, r.rows[0].fold_scores[v]);
    total += s;
  }
  EXPECT_NEAR(r.best_score, total / 6, 1e-12);
}

TEST(LearningCurve, FullSizeMatchesCvScore) {
  const auto ds = oracle::planted_dataset(150, 5);
  const HyperParams hp{5, 5, 5, 0.001};
  const auto cv = grid_search_cv(ds, Grid{{5}, {5}, {5}, {0.001}}, 10, 8);
  const std::size_t fold_train = 150 - 15;
  const auto lc = learning_curve(ds, hp, {30, fold_train}, 10, 8);
  ASSERT_EQ(lc.size(), 2u);
  EXPECT_NEAR(lc[1].tree_validation, cv.best_score, 1e-12);
  EXPECT_FALSE(std::isnan(lc[0].linear_validation));
}

TEST(LearningCurve, LinearUndefinedWhenTooFewSamples) {
  const auto ds = oracle::planted_dataset(100, 5);
  const auto lc = learning_curve(ds, HyperParams{}, {8, 40}, 5, 1);
  EXPECT_TRUE(std::isnan(lc[0].linear_validation));
  EXPECT_FALSE(std::isnan(lc[1].linear_validation));
  EXPECT_THROW(learning_curve(ds, HyperParams{}, {40, 8}, 5, 1), InvalidArgument);
  EXPECT_THROW(learning_curve(ds, HyperParams{}, {0}, 5, 1), InvalidArgument);
}

TEST(LearningCurve, CsvShape) {
  const auto ds = oracle::planted_dataset(100, 5);
  const auto csv = learning_curve_csv(learning_curve(ds, HyperParams{}, {8, 40}, 5, 1));
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "size,tree_train_mae_pct,tree_val_mae_pct,linear_train_mae_pct,linear_val_mae_pct");
  EXPECT_NE(csv.find("\n8,"), std::string::npos);
  EXPECT_NE(csv.find(",nan,nan\n"), std::string::npos);
}
