#pragma once

// Synthetic designs, toggle traces, activity features and ground-truth
// dynamic power. Stands in for the vendor activity/power trace flow.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtpower/common.hpp"

namespace dtpower {

using Count = std::uint32_t;

struct DesignSpec {
  std::size_t n_linear_nets = 120;
  std::size_t n_nonlinear_units = 16;
  double capacitance_min = 50e-12;  // farads
  double capacitance_max = 500e-12;
  double vdd = 1.0;           // volts
  double clock_freq = 100e6;  // hertz
  double static_power = 0.5;  // watts
  // Coefficient of each nonlinear unit is drawn from
  // nonlinear_strength * U(0.5, 1.5) watts.
  double nonlinear_strength = 16.0;
  std::size_t correlation_groups = 2;
  // Per cycle a group draws one toggle event at its rate; each member net
  // copies it with this probability and otherwise toggles independently at
  // the same rate. Marginal toggle rates are unaffected.
  double toggle_coupling = 0.9;
  // Each net scales its toggle probability by a factor drawn from
  // U(activity_scale_min, 1), so nets of one group differ in activity.
  double activity_scale_min = 0.3;
  std::uint64_t seed = 1;

  void validate() const {
    require(capacitance_min > 0.0 && capacitance_min <= capacitance_max,
            "DesignSpec: capacitance range must satisfy 0 < min <= max");
    require(vdd > 0.0, "DesignSpec: vdd must be positive");
    require(clock_freq > 0.0, "DesignSpec: clock_freq must be positive");
    require(n_linear_nets + n_nonlinear_units >= 1,
            "DesignSpec: design has no nets and no units");
    require(n_nonlinear_units == 0 || n_linear_nets >= 1,
            "DesignSpec: nonlinear units need at least one net to observe");
    require(nonlinear_strength >= 0.0,
            "DesignSpec: nonlinear_strength must be >= 0");
    require(static_power >= 0.0, "DesignSpec: static_power must be >= 0");
    require(toggle_coupling >= 0.0 && toggle_coupling <= 1.0,
            "DesignSpec: toggle_coupling must be in [0, 1]");
    require(activity_scale_min > 0.0 && activity_scale_min <= 1.0,
            "DesignSpec: activity_scale_min must be in (0, 1]");
  }
};

inline void to_json(nlohmann::json& j, const DesignSpec& s) {
  j = nlohmann::json{{"n_linear_nets", s.n_linear_nets},
                     {"n_nonlinear_units", s.n_nonlinear_units},
                     {"capacitance_min", s.capacitance_min},
                     {"capacitance_max", s.capacitance_max},
                     {"vdd", s.vdd},
                     {"clock_freq", s.clock_freq},
                     {"static_power", s.static_power},
                     {"nonlinear_strength", s.nonlinear_strength},
                     {"correlation_groups", s.correlation_groups},
                     {"toggle_coupling", s.toggle_coupling},
                     {"activity_scale_min", s.activity_scale_min},
                     {"seed", s.seed}};
}

// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, DesignSpec& s) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("n_linear_nets", s.n_linear_nets);
  get("n_nonlinear_units", s.n_nonlinear_units);
  get("capacitance_min", s.capacitance_min);
  get("capacitance_max", s.capacitance_max);
  get("vdd", s.vdd);
  get("clock_freq", s.clock_freq);
  get("static_power", s.static_power);
  get("nonlinear_strength", s.nonlinear_strength);
  get("correlation_groups", s.correlation_groups);
  get("toggle_coupling", s.toggle_coupling);
  get("activity_scale_min", s.activity_scale_min);
  get("seed", s.seed);
}

struct Net {
  std::uint32_t id = 0;
  double capacitance = 0.0;
  std::uint32_t group = 0;
  double activity_scale = 1.0;
};

struct NonlinearUnit {
  std::vector<std::uint32_t> inputs;  // net ids
  double coefficient = 0.0;           // watts
};

struct SyntheticDesign {
  std::vector<Net> nets;
  std::vector<NonlinearUnit> nonlinear_units;
  double vdd = 1.0;
  double clock_freq = 100e6;
  double static_power = 0.0;
  std::size_t n_groups = 1;
  double toggle_coupling = 0.0;

  std::vector<std::string> signal_names() const {
    std::vector<std::string> names;
    names.reserve(nets.size());
    for (const auto& n : nets) names.push_back("n" + std::to_string(n.id));
    return names;
  }
};

inline void to_json(nlohmann::json& j, const SyntheticDesign& d) {
  j = nlohmann::json::object();
  j["vdd"] = d.vdd;
  j["clock_freq"] = d.clock_freq;
  j["static_power"] = d.static_power;
  j["n_groups"] = d.n_groups;
  j["toggle_coupling"] = d.toggle_coupling;
  auto& nets = j["nets"] = nlohmann::json::array();
  for (const auto& n : d.nets)
    nets.push_back({{"id", n.id},
                    {"capacitance", n.capacitance},
                    {"group", n.group},
                    {"activity_scale", n.activity_scale}});
  auto& units = j["nonlinear_units"] = nlohmann::json::array();
  for (const auto& u : d.nonlinear_units)
    units.push_back({{"inputs", u.inputs}, {"coefficient", u.coefficient}});
}

inline void from_json(const nlohmann::json& j, SyntheticDesign& d) {
  j.at("vdd").get_to(d.vdd);
  j.at("clock_freq").get_to(d.clock_freq);
  j.at("static_power").get_to(d.static_power);
  j.at("n_groups").get_to(d.n_groups);
  j.at("toggle_coupling").get_to(d.toggle_coupling);
  d.nets.clear();
  for (const auto& n : j.at("nets"))
    d.nets.push_back({n.at("id").get<std::uint32_t>(), n.at("capacitance").get<double>(),
                      n.at("group").get<std::uint32_t>(), n.value("activity_scale", 1.0)});
  d.nonlinear_units.clear();
  for (const auto& u : j.at("nonlinear_units"))
    d.nonlinear_units.push_back({u.at("inputs").get<std::vector<std::uint32_t>>(),
                                 u.at("coefficient").get<double>()});
}

// Nets get ids 0..n-1 so an id doubles as the net's index (and feature column).
inline SyntheticDesign generate_design(const DesignSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SyntheticDesign d;
  d.vdd = spec.vdd;
  d.clock_freq = spec.clock_freq;
  d.static_power = spec.static_power;
  d.n_groups = std::max<std::size_t>(1, spec.correlation_groups);

  d.nets.reserve(spec.n_linear_nets);
  for (std::size_t i = 0; i < spec.n_linear_nets; ++i) {
    Net n;
    n.id = static_cast<std::uint32_t>(i);
    n.capacitance = uniform(rng, spec.capacitance_min, spec.capacitance_max);
    n.group = static_cast<std::uint32_t>(uniform_below(rng, d.n_groups));
    n.activity_scale = uniform(rng, spec.activity_scale_min, 1.0);
    d.nets.push_back(n);
  }

  // A unit's 2-4 operand nets are drawn from one correlation group (one
  // datapath); groups without nets are skipped.
  std::vector<std::vector<std::uint32_t>> members(d.n_groups);
  for (const auto& n : d.nets) members[n.group].push_back(n.id);
  std::vector<std::size_t> populated;
  for (std::size_t g = 0; g < members.size(); ++g)
    if (!members[g].empty()) populated.push_back(g);
  for (std::size_t u = 0; u < spec.n_nonlinear_units; ++u) {
    auto ids = members[populated[uniform_below(rng, populated.size())]];
    const std::size_t fan_in = std::min<std::size_t>(ids.size(), 2 + uniform_below(rng, 3));
    // Partial Fisher-Yates: the first fan_in entries become the subset.
    for (std::size_t i = 0; i < fan_in; ++i) {
      std::size_t j = i + uniform_below(rng, ids.size() - i);
      std::swap(ids[i], ids[j]);
    }
    ids.resize(fan_in);
    std::sort(ids.begin(), ids.end());
    double coeff = spec.nonlinear_strength * uniform(rng, 0.5, 1.5);
    d.nonlinear_units.push_back({std::move(ids), coeff});
  }

  d.toggle_coupling = spec.toggle_coupling;
  return d;
}

// Cumulative positive-edge counts per signal. levels are the sampled logic
// values, one per cycle; the level before cycle 0 is taken as 0 (reset).
// cumulative(sig, t) counts rising edges in cycles [0, t).
class ToggleTrace {
 public:
  ToggleTrace() = default;

  explicit ToggleTrace(std::vector<std::vector<std::uint8_t>> levels)
      : levels_(std::move(levels)) {
    n_cycles_ = levels_.empty() ? 0 : levels_.front().size();
    counts_.resize(levels_.size());
    for (std::size_t s = 0; s < levels_.size(); ++s) {
      require(levels_[s].size() == n_cycles_, "ToggleTrace: ragged level matrix");
      auto& c = counts_[s];
      c.resize(n_cycles_ + 1);
      c[0] = 0;
      std::uint8_t prev = 0;
      for (std::size_t t = 0; t < n_cycles_; ++t) {
        const std::uint8_t lvl = levels_[s][t] ? 1 : 0;
        c[t + 1] = c[t] + ((prev == 0 && lvl == 1) ? 1u : 0u);
        prev = lvl;
      }
    }
  }

  std::size_t n_signals() const { return levels_.size(); }
  std::size_t n_cycles() const { return n_cycles_; }

  Count cumulative(std::size_t sig, std::size_t t) const {
    require(sig < counts_.size(), "ToggleTrace: unknown signal id");
    require(t <= n_cycles_, "ToggleTrace: cycle out of range");
    return counts_[sig][t];
  }

  std::uint8_t level(std::size_t sig, std::size_t t) const {
    return levels_.at(sig).at(t);
  }

  const std::vector<std::uint8_t>& levels(std::size_t sig) const {
    return levels_.at(sig);
  }

 private:
  std::vector<std::vector<std::uint8_t>> levels_;
  std::vector<std::vector<Count>> counts_;
  std::size_t n_cycles_ = 0;
};

// a(sig) = s(sig, t_end) - s(sig, t_start)
inline Count activity(const ToggleTrace& trace, std::size_t sig, std::size_t t_start,
                      std::size_t t_end) {
  require(sig < trace.n_signals(), "activity: unknown signal id");
  require(t_start <= t_end, "activity: reversed interval");
  require(t_end <= trace.n_cycles(), "activity: interval past end of trace");
  return trace.cumulative(sig, t_end) - trace.cumulative(sig, t_start);
}

// Sum_i alpha_i C_i Vdd^2 f + Sum_u coeff_u * (mean alpha over u's inputs)^2,
// alpha = count / period_cycles. Static power is not included.
inline double dynamic_power(const SyntheticDesign& design, std::span<const Count> activities,
                            std::size_t period_cycles) {
  require(activities.size() == design.nets.size(),
          "dynamic_power: one activity per net required");
  require(period_cycles > 0, "dynamic_power: period_cycles must be positive");
  const double period = static_cast<double>(period_cycles);
  const double v2f = design.vdd * design.vdd * design.clock_freq;
  double p = 0.0;
  for (std::size_t i = 0; i < activities.size(); ++i) {
    require(activities[i] <= period_cycles, "dynamic_power: activity exceeds period");
    p += static_cast<double>(activities[i]) / period * design.nets[i].capacitance * v2f;
  }
  for (const auto& u : design.nonlinear_units) {
    if (u.inputs.empty()) continue;
    double mean_alpha = 0.0;
    for (auto id : u.inputs) mean_alpha += static_cast<double>(activities[id]) / period;
    mean_alpha /= static_cast<double>(u.inputs.size());
    p += u.coefficient * mean_alpha * mean_alpha;
  }
  return p;
}

struct Sample {
  std::vector<Count> features;
  double true_dynamic_power = 0.0;  // watts
  std::size_t period_cycles = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> feature_names;
  std::size_t period_cycles = 0;
  double clock_freq = 0.0;
  double vdd = 0.0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t n_features() const { return feature_names.size(); }

  std::vector<double> targets() const {
    std::vector<double> y;
    y.reserve(samples.size());
    for (const auto& s : samples) y.push_back(s.true_dynamic_power);
    return y;
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out = header_copy();
    out.samples.reserve(rows.size());
    for (auto r : rows) out.samples.push_back(samples.at(r));
    return out;
  }

  Dataset select_features(std::span<const std::size_t> cols) const {
    Dataset out = header_copy();
    out.feature_names.clear();
    for (auto c : cols) out.feature_names.push_back(feature_names.at(c));
    out.samples.reserve(samples.size());
    for (const auto& s : samples) {
      Sample t;
      t.true_dynamic_power = s.true_dynamic_power;
      t.period_cycles = s.period_cycles;
      t.features.reserve(cols.size());
      for (auto c : cols) t.features.push_back(s.features[c]);
      out.samples.push_back(std::move(t));
    }
    return out;
  }

  std::size_t column_of(const std::string& name) const {
    auto it = std::find(feature_names.begin(), feature_names.end(), name);
    if (it == feature_names.end())
      throw InvalidArgument("dataset has no feature '" + name + "'");
    return static_cast<std::size_t>(it - feature_names.begin());
  }

  void validate() const {
    for (const auto& s : samples) {
      require(s.features.size() == feature_names.size(),
              "Dataset: sample feature dimensionality mismatch");
      require(s.period_cycles == period_cycles, "Dataset: mixed period_cycles");
      for (auto f : s.features)
        require(f <= period_cycles, "Dataset: feature exceeds period_cycles");
      require(s.true_dynamic_power >= 0.0, "Dataset: negative power label");
    }
  }

 private:
  Dataset header_copy() const {
    Dataset out;
    out.feature_names = feature_names;
    out.period_cycles = period_cycles;
    out.clock_freq = clock_freq;
    out.vdd = vdd;
    return out;
  }
};

namespace detail {

// Advances every net by period_cycles cycles. Each correlation group draws a
// toggle probability U(0, 1) for the period and one toggle event per cycle at
// that rate. A net copies its group's event with probability toggle_coupling
// and otherwise flips independently at the group rate; either way the flip is
// kept with probability activity_scale. Returns the rising-edge count per net.
inline std::vector<Count> synthesize_period(const SyntheticDesign& design,
                                            std::size_t period_cycles, Rng& rng,
                                            std::vector<std::uint8_t>& state,
                                            std::vector<std::vector<std::uint8_t>>* record) {
  std::vector<double> rate(design.n_groups);
  for (auto& r : rate) r = uniform01(rng);
  std::vector<Count> edges(design.nets.size(), 0);
  std::vector<std::uint8_t> event(design.n_groups);
  for (std::size_t t = 0; t < period_cycles; ++t) {
    for (std::size_t g = 0; g < event.size(); ++g) event[g] = uniform01(rng) < rate[g];
    for (std::size_t i = 0; i < design.nets.size(); ++i) {
      const auto g = design.nets[i].group;
      const auto& net = design.nets[i];
      bool flip = uniform01(rng) < design.toggle_coupling ? event[g] != 0
                                                           : uniform01(rng) < rate[g];
      if (flip && net.activity_scale < 1.0) flip = uniform01(rng) < net.activity_scale;
      if (flip) {
        state[i] ^= 1;
        if (state[i]) ++edges[i];
      }
      if (record) (*record)[i].push_back(state[i]);
    }
  }
  return edges;
}

}  // namespace detail

// One continuous trace of n_periods * period_cycles cycles (levels carry over
// between periods).
inline ToggleTrace simulate_trace(const SyntheticDesign& design, std::size_t n_periods,
                                  std::size_t period_cycles, std::uint64_t seed) {
  require(period_cycles > 0, "simulate_trace: period_cycles must be positive");
  Rng rng(seed);
  std::vector<std::uint8_t> state(design.nets.size(), 0);
  std::vector<std::vector<std::uint8_t>> levels(design.nets.size());
  for (auto& l : levels) l.reserve(n_periods * period_cycles);
  for (std::size_t p = 0; p < n_periods; ++p)
    detail::synthesize_period(design, period_cycles, rng, state, &levels);
  return ToggleTrace(std::move(levels));
}

// Every sample is an independent estimation period starting from reset; the
// feature vector holds the activity of every net of the design.
inline Dataset simulate_dataset(const SyntheticDesign& design, std::size_t n_samples,
                                std::size_t period_cycles, std::uint64_t seed) {
  require(n_samples >= 1, "simulate_dataset: n_samples must be >= 1");
  require(period_cycles > 0, "simulate_dataset: period_cycles must be positive");
  Dataset ds;
  ds.feature_names = design.signal_names();
  ds.period_cycles = period_cycles;
  ds.clock_freq = design.clock_freq;
  ds.vdd = design.vdd;
  ds.samples.reserve(n_samples);
  Rng rng(seed);
  for (std::size_t k = 0; k < n_samples; ++k) {
    std::vector<std::uint8_t> state(design.nets.size(), 0);
    Sample s;
    s.features = detail::synthesize_period(design, period_cycles, rng, state, nullptr);
    s.true_dynamic_power = dynamic_power(design, s.features, period_cycles);
    s.period_cycles = period_cycles;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// Column indices sorted by total activity (descending, ties to the lower
// index), truncated to top_m.
inline std::vector<std::size_t> rank_signals_by_activity(const Dataset& ds,
                                                         std::size_t top_m = 100) {
  require(top_m > 0, "rank_signals_by_activity: top_m must be positive");
  require(top_m <= ds.n_features(), "rank_signals_by_activity: top_m exceeds feature count");
  std::vector<std::uint64_t> total(ds.n_features(), 0);
  for (const auto& s : ds.samples)
    for (std::size_t j = 0; j < total.size(); ++j) total[j] += s.features[j];
  std::vector<std::size_t> order(total.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return total[a] > total[b]; });
  order.resize(top_m);
  return order;
}

// ---- persistence -----------------------------------------------------------
// CSV: header of feature names followed by power_w; one row per sample.
// Sidecar JSON: period_cycles, clock_freq, vdd.

inline std::string dataset_to_csv(const Dataset& ds) {
  std::string out;
  for (const auto& n : ds.feature_names) {
    out += n;
    out += ',';
  }
  out += "power_w\n";
  for (const auto& s : ds.samples) {
    for (auto f : s.features) {
      out += std::to_string(f);
      out += ',';
    }
    out += format_double(s.true_dynamic_power);
    out += '\n';
  }
  return out;
}

inline nlohmann::json dataset_metadata(const Dataset& ds) {
  return {{"period_cycles", ds.period_cycles},
          {"clock_freq", ds.clock_freq},
          {"vdd", ds.vdd},
          {"n_samples", ds.size()},
          {"n_features", ds.n_features()}};
}

inline Dataset dataset_from_csv(std::string_view csv, const nlohmann::json& meta) {
  Dataset ds;
  try {
    ds.period_cycles = meta.at("period_cycles").get<std::size_t>();
    ds.clock_freq = meta.at("clock_freq").get<double>();
    ds.vdd = meta.at("vdd").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset metadata: ") + e.what());
  }
  auto lines = split(csv, '\n');
  if (lines.empty() || lines.front().empty()) throw ConfigError("dataset CSV: missing header");
  auto header = split(lines.front(), ',');
  if (header.back() != "power_w") throw ConfigError("dataset CSV: last column must be power_w");
  for (std::size_t i = 0; i + 1 < header.size(); ++i) ds.feature_names.emplace_back(header[i]);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    if (lines[r].empty()) continue;
    auto cells = split(lines[r], ',');
    if (cells.size() != header.size())
      throw ConfigError("dataset CSV: row " + std::to_string(r) + " has wrong column count");
    Sample s;
    s.period_cycles = ds.period_cycles;
    for (std::size_t i = 0; i + 1 < cells.size(); ++i)
      s.features.push_back(parse_unsigned<Count>(cells[i]));
    s.true_dynamic_power = parse_double(cells.back());
    ds.samples.push_back(std::move(s));
  }
  ds.validate();
  return ds;
}

}  // namespace dtpower
