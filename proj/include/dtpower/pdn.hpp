#pragma once

// Multi-phase buck regulator loss model, the power -> phase-count lookup
// table and LUT-driven phase shedding.

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtpower/common.hpp"

namespace dtpower {

// Loss family: every active phase costs a fixed loss and the load current
// (load / output_voltage) is shared by the active phases' conduction
// resistance.
struct PdnModel {
  std::size_t max_phases = 5;
  double per_phase_fixed_loss = 0.1;   // watts
  double conduction_resistance = 0.02;  // ohms
  double output_voltage = 1.0;          // volts
  double transition_loss = 0.0;         // watts charged per phase-count change
  double nominal_power = 20.0;          // watts

  void validate() const {
    require(max_phases >= 1, "PdnModel: max_phases must be >= 1");
    require(per_phase_fixed_loss >= 0.0 && conduction_resistance >= 0.0 &&
                transition_loss >= 0.0,
            "PdnModel: loss parameters must be >= 0");
    require(output_voltage > 0.0, "PdnModel: output_voltage must be positive");
  }
};

inline void to_json(nlohmann::json& j, const PdnModel& m) {
  j = nlohmann::json{{"max_phases", m.max_phases},
                     {"per_phase_fixed_loss", m.per_phase_fixed_loss},
                     {"conduction_resistance", m.conduction_resistance},
                     {"output_voltage", m.output_voltage},
                     {"transition_loss", m.transition_loss},
                     {"nominal_power", m.nominal_power}};
}

inline void from_json(const nlohmann::json& j, PdnModel& m) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("max_phases", m.max_phases);
  get("per_phase_fixed_loss", m.per_phase_fixed_loss);
  get("conduction_resistance", m.conduction_resistance);
  get("output_voltage", m.output_voltage);
  get("transition_loss", m.transition_loss);
  get("nominal_power", m.nominal_power);
}

inline double input_power(const PdnModel& m, double load, std::size_t phases) {
  require(phases >= 1 && phases <= m.max_phases, "input_power: phase count out of range");
  require(load >= 0.0, "input_power: negative load");
  const double current = load / m.output_voltage;
  const double n = static_cast<double>(phases);
  return load + n * m.per_phase_fixed_loss + current * current * m.conduction_resistance / n;
}

inline double efficiency(const PdnModel& m, double load, std::size_t phases) {
  return load / input_power(m, load, phases);
}

// Phase count with the highest efficiency at `load`; ties go to fewer phases.
inline std::size_t optimal_phases(const PdnModel& m, double load) {
  std::size_t best = 1;
  double best_in = input_power(m, load, 1);
  for (std::size_t n = 2; n <= m.max_phases; ++n) {
    const double in = input_power(m, load, n);
    // For a fixed load, highest efficiency is lowest input power.
    if (in < best_in) {
      best = n;
      best_in = in;
    }
  }
  return best;
}

struct PhaseLut {
  struct Entry {
    double power = 0.0;  // watts, lower edge of the entry
    std::size_t phases = 1;
  };
  std::vector<Entry> entries;  // breakpoints strictly ascending

  // Decision of the last breakpoint <= power (the first entry below range).
  std::size_t lookup(double power) const {
    require(!entries.empty(), "PhaseLut: empty table");
    auto it = std::upper_bound(entries.begin(), entries.end(), power,
                               [](double p, const Entry& e) { return p < e.power; });
    if (it == entries.begin()) return entries.front().phases;
    return std::prev(it)->phases;
  }
};

inline void to_json(nlohmann::json& j, const PhaseLut& lut) {
  j = nlohmann::json::array();
  for (const auto& e : lut.entries) j.push_back({{"power_w", e.power}, {"phases", e.phases}});
}

inline void from_json(const nlohmann::json& j, PhaseLut& lut) {
  lut.entries.clear();
  for (const auto& e : j)
    lut.entries.push_back({e.at("power_w").get<double>(), e.at("phases").get<std::size_t>()});
}

// Breakpoints go where the optimal phase count changes along the grid.
inline PhaseLut build_lut(const PdnModel& m, std::span<const double> grid) {
  m.validate();
  require(grid.size() >= 2, "build_lut: need at least two grid points");
  for (std::size_t i = 1; i < grid.size(); ++i)
    require(grid[i] > grid[i - 1], "build_lut: grid must be strictly ascending");
  PhaseLut lut;
  for (double p : grid) {
    const std::size_t n = optimal_phases(m, p);
    if (lut.entries.empty() || lut.entries.back().phases != n) lut.entries.push_back({p, n});
  }
  return lut;
}

inline std::vector<double> linear_grid(double lo, double hi, std::size_t points) {
  require(points >= 2 && hi > lo, "linear_grid: bad range");
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
  return g;
}

struct ShedResult {
  std::vector<std::size_t> phases;
  std::vector<double> cumulative_improvement;  // improvement over periods 0..i
  double improvement = 0.0;                    // Eff_impv over the whole sequence
};

// Eff_impv = 1 - sum(P_opt(i) + P_loss(i)) / sum(P_max(i)), where P_* is the
// regulator input power under the LUT's and the maximum phase count, and
// P_loss is charged whenever consecutive periods use different phase counts.
inline ShedResult shed(const PdnModel& m, const PhaseLut& lut, std::span<const double> powers) {
  m.validate();
  require(!powers.empty(), "shed: empty power sequence");
  ShedResult r;
  double used = 0.0;
  double reference = 0.0;
  for (std::size_t i = 0; i < powers.size(); ++i) {
    const std::size_t n = std::clamp<std::size_t>(lut.lookup(powers[i]), 1, m.max_phases);
    used += input_power(m, powers[i], n);
    if (i > 0 && n != r.phases.back()) used += m.transition_loss;
    reference += input_power(m, powers[i], m.max_phases);
    r.phases.push_back(n);
    r.cumulative_improvement.push_back(reference > 0.0 ? 1.0 - used / reference : 0.0);
  }
  r.improvement = r.cumulative_improvement.back();
  return r;
}

// period,power_w,phases,cumulative_eff_impv
inline std::string shed_csv(std::span<const double> powers, const ShedResult& r) {
  std::string out = "period,power_w,phases,cumulative_eff_impv\n";
  for (std::size_t i = 0; i < powers.size(); ++i)
    out += std::to_string(i) + "," + format_double(powers[i]) + "," +
           std::to_string(r.phases[i]) + "," + format_double(r.cumulative_improvement[i]) + "\n";
  return out;
}

}  // namespace dtpower
