#include <gtest/gtest.h>

#include "dtpower/pdn.hpp"
#include "dtpower/common.hpp"

using namespace dtpower;

namespace {

// Brute force: evaluate every phase count, keep the first maximum.
std::size_t argmax_phases(const PdnModel& m, double load) {
  std::size_t best = 1;
  double best_eff = -1.0;
  for (std::size_t n = 1; n <= m.max_phases; ++n) {
    const double in = load + n * m.per_phase_fixed_loss +
                      (load / m.output_voltage) * (load / m.output_voltage) *
                          m.conduction_resistance / n;
    const double eff = in > 0 ? load / in : 0.0;
    if (eff > best_eff) {
      best_eff = eff;
      best = n;
    }
  }
  return best;
}

}  // namespace

TEST(InputPower, HandValues) {
  const PdnModel m;
  EXPECT_NEAR(input_power(m, 1.0, 1), 1.12, 1e-12);
  EXPECT_NEAR(input_power(m, 1.0, 5), 1.504, 1e-12);
  EXPECT_NEAR(input_power(m, 20.0, 1), 28.1, 1e-12);
  EXPECT_NEAR(input_power(m, 20.0, 5), 22.1, 1e-12);
  EXPECT_NEAR(efficiency(m, 1.0, 1), 1.0 / 1.12, 1e-12);
  EXPECT_NEAR(efficiency(m, 1.0, 5), 1.0 / 1.504, 1e-12);
  EXPECT_EQ(input_power(m, 0.0, 3), 3 * m.per_phase_fixed_loss);
  EXPECT_EQ(efficiency(m, 0.0, 3), 0.0);
  EXPECT_THROW(input_power(m, 1.0, 0), InvalidArgument);
  EXPECT_THROW(input_power(m, 1.0, 6), InvalidArgument);
  EXPECT_THROW(input_power(m, -1.0, 1), InvalidArgument);
}

TEST(InputPower, NeverBelowLoad) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    PdnModel m;
    m.per_phase_fixed_loss = uniform(rng, 0, 0.5);
    m.conduction_resistance = uniform(rng, 0, 0.05);
    const double load = uniform(rng, 0, 40);
    const std::size_t n = 1 + uniform_below(rng, 5);
    EXPECT_GE(input_power(m, load, n), load);
    if (m.per_phase_fixed_loss > 0) EXPECT_GT(input_power(m, load, n), load);
  }
}

TEST(OptimalPhases, LightAndHeavyLoad) {
  const PdnModel m;
  EXPECT_EQ(optimal_phases(m, 1.0), 1u);
  EXPECT_EQ(optimal_phases(m, 20.0), 5u);
}

TEST(OptimalPhases, MonotoneInLoad) {
  Rng rng(4);
  for (int fam = 0; fam < 50; ++fam) {
    PdnModel m;
    m.per_phase_fixed_loss = uniform(rng, 0.01, 0.5);
    m.conduction_resistance = uniform(rng, 0.001, 0.05);
    m.max_phases = 1 + uniform_below(rng, 8);
    std::size_t prev = 1;
    for (double p = 0.0; p <= 60.0; p += 0.05) {
      const auto n = optimal_phases(m, p);
      EXPECT_GE(n, prev);
      prev = n;
    }
  }
}

TEST(Lut, EqualsBruteForceEverywhere) {
  const PdnModel m;
  const auto grid = linear_grid(0.5, 20.0, 400);
  const auto lut = build_lut(m, grid);
  for (double p : grid) EXPECT_EQ(lut.lookup(p), argmax_phases(m, p)) << p;
  for (std::size_t i = 1; i < lut.entries.size(); ++i) {
    EXPECT_GT(lut.entries[i].power, lut.entries[i - 1].power);
    EXPECT_NE(lut.entries[i].phases, lut.entries[i - 1].phases);
  }
  for (const auto& e : lut.entries) {
    EXPECT_GE(e.phases, 1u);
    EXPECT_LE(e.phases, m.max_phases);
  }
}

TEST(Lut, SinglePhaseModel) {
  PdnModel m;
  m.max_phases = 1;
  const auto lut = build_lut(m, linear_grid(0.5, 20.0, 50));
  EXPECT_EQ(lut.entries.size(), 1u);
}

TEST(Lut, LookupBetweenAndOutsideBreakpoints) {
  PhaseLut lut;
  lut.entries = {{1.0, 1}, {5.0, 2}, {9.0, 4}};
  EXPECT_EQ(lut.lookup(0.2), 1u);
  EXPECT_EQ(lut.lookup(4.99), 1u);
  EXPECT_EQ(lut.lookup(5.0), 2u);
  EXPECT_EQ(lut.lookup(8.0), 2u);
  EXPECT_EQ(lut.lookup(100.0), 4u);
  EXPECT_THROW(PhaseLut{}.lookup(1.0), InvalidArgument);
  const auto back = nlohmann::json(lut).get<PhaseLut>();
  EXPECT_EQ(back.entries.size(), 3u);
  EXPECT_EQ(back.lookup(8.0), 2u);
}

TEST(Lut, BadGrid) {
  const PdnModel m;
  EXPECT_THROW(build_lut(m, std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(build_lut(m, std::vector<double>{2.0, 1.0}), InvalidArgument);
}

TEST(Shed, TwoPeriodExample) {
  const PdnModel m;
  const auto lut = build_lut(m, linear_grid(0.5, 20.0, 40));
  const std::vector<double> powers{1.0, 20.0};
  const auto r = shed(m, lut, powers);
  EXPECT_EQ(r.phases, (std::vector<std::size_t>{1, 5}));
  const double want = 1.0 - (1.12 + 22.1) / (1.504 + 22.1);
  EXPECT_NEAR(r.improvement, want, 1e-9 * want);
  EXPECT_NEAR(r.improvement, 0.0162684, 1e-7);
}

TEST(Shed, AlwaysMaxPhasesGivesZero) {
  PdnModel m;
  const auto lut = build_lut(m, linear_grid(0.5, 40.0, 100));
  const std::vector<double> heavy{30.0, 35.0, 38.0};
  EXPECT_EQ(shed(m, lut, heavy).improvement, 0.0);
  EXPECT_THROW(shed(m, lut, std::vector<double>{}), InvalidArgument);
}

TEST(Shed, TransitionLossCharged) {
  PdnModel m;
  m.transition_loss = 0.05;
  const auto lut = build_lut(m, linear_grid(0.5, 20.0, 40));
  const std::vector<double> powers{1.0, 20.0, 20.0, 1.0};
  const auto r = shed(m, lut, powers);
  const double used = 2 * (1.12 + 22.1) + 2 * 0.05;
  const double ref = 2 * (1.504 + 22.1);
  EXPECT_NEAR(r.improvement, 1.0 - used / ref, 1e-12);
}

TEST(Shed, NonNegativeWithoutTransitionLoss) {
  Rng rng(6);
  const PdnModel m;
  const auto grid = linear_grid(0.25, 40.0, 160);
  const auto lut = build_lut(m, grid);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> p(1 + uniform_below(rng, 40));
    for (auto& v : p) v = grid[uniform_below(rng, grid.size())];
    const auto r = shed(m, lut, p);
    EXPECT_GE(r.improvement, 0.0);
    bool all_max = true;
    for (auto n : r.phases) all_max = all_max && n == m.max_phases;
    EXPECT_EQ(r.improvement == 0.0, all_max);
  }
}

TEST(Shed, CausalDecisions) {
  const PdnModel m;
  const auto lut = build_lut(m, linear_grid(0.5, 30.0, 120));
  const std::vector<double> a{2.0, 9.0, 14.0, 25.0};
  auto b = a;
  b.push_back(3.0);
  const auto ra = shed(m, lut, a);
  const auto rb = shed(m, lut, b);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(ra.phases[i], rb.phases[i]);
    EXPECT_EQ(ra.cumulative_improvement[i], rb.cumulative_improvement[i]);
  }
}

TEST(Shed, CsvLayout) {
  const PdnModel m;
  const auto lut = build_lut(m, linear_grid(0.5, 20.0, 40));
  const std::vector<double> p{1.0, 20.0};
  const auto csv = shed_csv(p, shed(m, lut, p));
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "period,power_w,phases,cumulative_eff_impv");
  EXPECT_NE(csv.find("\n0,1,1,"), std::string::npos);
  EXPECT_NE(csv.find("\n1,20,5,"), std::string::npos);
}

TEST(PdnModel, JsonAndValidation) {
  PdnModel m;
  m.per_phase_fixed_loss = 0.2;
  const auto back = nlohmann::json(m).get<PdnModel>();
  EXPECT_EQ(back.per_phase_fixed_loss, 0.2);
  EXPECT_EQ(back.max_phases, 5u);
  m.conduction_resistance = -1;
  EXPECT_THROW(m.validate(), InvalidArgument);
  PdnModel z;
  z.max_phases = 0;
  EXPECT_THROW(z.validate(), InvalidArgument);
}
