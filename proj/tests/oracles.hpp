#pragma once

// Reference implementations used only by the tests. They favour obviousness
// over speed and share no code with the library beyond the data types.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dtpower/hwsim.hpp"
#include "dtpower/model.hpp"
#include "dtpower/workload.hpp"

namespace oracle {

using dtpower::Count;
using i128 = __int128;

// Exact rational p / q with q > 0.
struct Frac {
  i128 p = 0;
  i128 q = 1;
};

inline int cmp(const Frac& a, const Frac& b) {
  const i128 l = a.p * b.q;
  const i128 r = b.p * a.q;
  return l < r ? -1 : (l > r ? 1 : 0);
}

// n * (variance reduction) for integer targets, i.e.
// SL^2/nL + SR^2/nR - S^2/n as an exact fraction.
inline Frac scaled_decrease(i128 sl, i128 nl, i128 sr, i128 nr) {
  const i128 s = sl + sr;
  const i128 n = nl + nr;
  // common denominator nl * nr * n
  return {sl * sl * nr * n + sr * sr * nl * n - s * s * nl * nr, nl * nr * n};
}

struct SplitChoice {
  std::size_t feature = 0;
  double threshold = 0.0;
  Frac score;
};

// Exhaustive best split over every feature and every midpoint between
// distinct values. Targets must be integers. Strictly positive reduction
// only; ties keep the lowest feature, then the lowest threshold.
inline std::optional<SplitChoice> best_split_exhaustive(const std::vector<std::vector<Count>>& x,
                                                        const std::vector<long long>& y,
                                                        const std::vector<std::size_t>& rows,
                                                        std::size_t min_leaf) {
  std::optional<SplitChoice> best;
  if (x.empty()) return best;
  for (std::size_t f = 0; f < x.front().size(); ++f) {
    std::vector<Count> values;
    for (auto r : rows) values.push_back(x[r][f]);
    std::sort(values.begin(), values.end());
    values.erase(std::unique(values.begin(), values.end()), values.end());
    for (std::size_t i = 0; i + 1 < values.size(); ++i) {
      const double thr = (static_cast<double>(values[i]) + static_cast<double>(values[i + 1])) / 2;
      i128 sl = 0, sr = 0, nl = 0, nr = 0;
      for (auto r : rows) {
        if (static_cast<double>(x[r][f]) <= thr) {
          sl += y[r];
          ++nl;
        } else {
          sr += y[r];
          ++nr;
        }
      }
      if (nl < static_cast<i128>(min_leaf) || nr < static_cast<i128>(min_leaf)) continue;
      const Frac score = scaled_decrease(sl, nl, sr, nr);
      if (score.p <= 0) continue;
      if (!best || cmp(score, best->score) > 0) best = SplitChoice{f, thr, score};
    }
  }
  return best;
}

// n^2 * variance as an exact integer.
inline i128 scaled_variance(const std::vector<long long>& y, const std::vector<std::size_t>& rows) {
  i128 s = 0, q = 0;
  for (auto r : rows) {
    s += y[r];
    q += static_cast<i128>(y[r]) * y[r];
  }
  return static_cast<i128>(rows.size()) * q - s * s;
}

struct Node {
  bool leaf = true;
  std::size_t feature = 0;
  double threshold = 0.0;
  std::size_t left = 0, right = 0;
  double value = 0.0;
  std::vector<std::size_t> rows;
  std::size_t depth = 0;
};

// Naive recursive CART with the same stopping rules, nodes in pre-order.
inline std::vector<Node> build_tree(const std::vector<std::vector<Count>>& x,
                                    const std::vector<long long>& y,
                                    const dtpower::HyperParams& hp) {
  std::vector<Node> nodes;
  std::vector<std::size_t> all(y.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const long double root_var = static_cast<long double>(scaled_variance(y, all)) /
                               (static_cast<long double>(all.size()) * all.size());

  auto grow = [&](auto&& self, std::vector<std::size_t> rows, std::size_t depth) -> std::size_t {
    const std::size_t id = nodes.size();
    nodes.push_back({});
    long long sum = 0;
    for (auto r : rows) sum += y[r];
    nodes[id].value = static_cast<double>(sum) / static_cast<double>(rows.size());
    nodes[id].rows = rows;
    nodes[id].depth = depth;

    const i128 sv = scaled_variance(y, rows);
    const long double var =
        static_cast<long double>(sv) / (static_cast<long double>(rows.size()) * rows.size());
    if (depth >= hp.max_depth || rows.size() < hp.min_split_sample || sv == 0 ||
        var / root_var < static_cast<long double>(hp.min_leaf_impurity))
      return id;
    auto s = best_split_exhaustive(x, y, rows, hp.min_leaf_sample);
    if (!s) return id;
    std::vector<std::size_t> l, r;
    for (auto i : rows) (static_cast<double>(x[i][s->feature]) <= s->threshold ? l : r).push_back(i);
    const auto li = self(self, l, depth + 1);
    const auto ri = self(self, r, depth + 1);
    nodes[id].leaf = false;
    nodes[id].feature = s->feature;
    nodes[id].threshold = s->threshold;
    nodes[id].left = li;
    nodes[id].right = ri;
    return id;
  };
  grow(grow, all, 0);
  return nodes;
}

// Evaluates the exported rule text by parsing it line by line.
inline double eval_rules(const std::string& rules, const std::vector<std::string>& names,
                         const std::vector<Count>& features) {
  std::map<std::string, Count> env;
  for (std::size_t i = 0; i < names.size(); ++i) env[names[i]] = features[i];
  std::vector<std::string> lines;
  {
    std::istringstream in(rules);
    std::string l;
    while (std::getline(in, l)) lines.push_back(l.substr(l.find_first_not_of(' ')));
  }
  // Walk: on "if" evaluate; when false skip to the matching "} else {".
  std::size_t pc = 0;
  while (pc < lines.size()) {
    const auto& l = lines[pc];
    if (l.rfind("return ", 0) == 0) return std::stod(l.substr(7, l.size() - 8));
    if (l.rfind("if (", 0) == 0) {
      const auto le = l.find(" <= ");
      const std::string name = l.substr(4, le - 4);
      const double thr = std::stod(l.substr(le + 4, l.find(')') - le - 4));
      if (static_cast<double>(env.at(name)) <= thr) {
        ++pc;
        continue;
      }
      int nest = 0;
      for (++pc; pc < lines.size(); ++pc) {
        if (lines[pc].rfind("if (", 0) == 0) ++nest;
        if (lines[pc] == "} else {") {
          if (nest == 0) break;
          --nest;
        }
      }
      ++pc;
      continue;
    }
    ++pc;
  }
  throw std::runtime_error("rule text fell through");
}

// Random structurally valid image of the given depth (depth 0 is one leaf).
inline dtpower::TreeMemoryImage random_image(dtpower::Rng& rng, std::size_t depth,
                                             std::size_t n_features, std::uint32_t max_threshold) {
  using dtpower::NodeFields;
  struct Pending {
    std::size_t depth;
    bool must_reach;  // keeps at least one path at full depth
  };
  std::vector<NodeFields> nodes;
  std::vector<Pending> pend{{0, true}};
  for (std::size_t i = 0; i < pend.size(); ++i) {
    const auto p = pend[i];
    const bool leaf = p.depth == depth || (!p.must_reach && dtpower::uniform01(rng) < 0.3);
    if (leaf) {
      nodes.push_back(NodeFields::make_leaf(static_cast<std::uint32_t>(dtpower::uniform_below(rng, 65536))));
      continue;
    }
    const auto l = static_cast<std::uint32_t>(pend.size());
    const bool deep_left = dtpower::uniform_below(rng, 2) == 0;
    pend.push_back({p.depth + 1, p.must_reach && deep_left});
    pend.push_back({p.depth + 1, p.must_reach && !deep_left});
    nodes.push_back(NodeFields::make_decision(
        static_cast<std::uint32_t>(dtpower::uniform_below(rng, n_features)),
        static_cast<std::uint32_t>(dtpower::uniform_below(rng, std::uint64_t{max_threshold} + 1)),
        l, l + 1));
  }
  dtpower::TreeMemoryImage img;
  for (const auto& n : nodes) img.words.push_back(dtpower::node_encode(n));
  img.n_nodes = nodes.size();
  img.max_depth = depth;
  return img;
}

// Node walk written directly against the bit layout, not via node_decode.
inline std::pair<std::uint32_t, std::size_t> walk_words(const std::vector<std::uint64_t>& words,
                                                        const std::vector<Count>& f) {
  std::uint64_t addr = 0;
  std::size_t depth = 0;
  while (true) {
    const std::uint64_t w = words.at(addr);
    if (w >> 63) return {static_cast<std::uint32_t>(w & 0xFFFF), depth};
    const auto feat = (w >> 48) & 0x7FFF;
    const auto thr = (w >> 28) & 0xFFFFF;
    addr = f.at(feat) <= thr ? (w >> 14) & 0x3FFF : w & 0x3FFF;
    ++depth;
  }
}

// Dataset from raw columns and targets.
inline dtpower::Dataset make_dataset(const std::vector<std::vector<Count>>& x,
                                     const std::vector<double>& y, double freq = 100e6) {
  dtpower::Dataset ds;
  ds.clock_freq = freq;
  ds.vdd = 1.0;
  ds.period_cycles = 1u << 20;
  const std::size_t f = x.empty() ? 0 : x.front().size();
  for (std::size_t c = 0; c < f; ++c) ds.feature_names.push_back("f" + std::to_string(c));
  for (std::size_t r = 0; r < x.size(); ++r) ds.samples.push_back({x[r], y[r], ds.period_cycles});
  return ds;
}

// Ten independent uniform features of which only f0 and f1 drive the target.
inline dtpower::Dataset planted_dataset(std::size_t n, std::uint64_t seed,
                                        std::size_t n_features = 10) {
  dtpower::Rng rng(seed);
  std::vector<std::vector<Count>> x;
  std::vector<double> y;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Count> row(n_features);
    for (auto& v : row) v = static_cast<Count>(dtpower::uniform_below(rng, 301));
    const double b = row[1] / 300.0;
    y.push_back(0.5 + 0.01 * row[0] + 8.0 * b * b);
    x.push_back(std::move(row));
  }
  auto ds = make_dataset(x, y);
  ds.period_cycles = 300;
  for (auto& s : ds.samples) s.period_cycles = 300;
  return ds;
}

}  // namespace oracle
