#pragma once

// Bit-exact model of the monitoring wrapper: positive-edge activity counters,
// the tree structure memory and the four-state decision-tree engine.
//
// Node word layout (64 bits):
//   bit 63      leaf flag
//   decision:   bits 62..48 feature address (15)
//               bits 47..28 threshold (20, unsigned, feature <= threshold goes left)
//               bits 27..14 left child address (14)
//               bits 13..0  right child address (14)
//   leaf:       bits 15..0  power in milliwatts; all other bits zero
//
// LUT- and DSP-based counters behave identically at this level and share one
// model.

#include <cmath>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "dtpower/model.hpp"
#include "dtpower/workload.hpp"

namespace dtpower {

// ---- activity counter ------------------------------------------------------

inline constexpr unsigned kDefaultCounterWidth = 20;

struct CounterState {
  unsigned width = kDefaultCounterWidth;
  std::uint32_t value = 0;
  std::uint8_t last_level = 0;

  friend bool operator==(const CounterState&, const CounterState&) = default;
};

// Counts 0 -> 1 transitions. The count wraps at 2^width, which cannot happen
// while the estimation period fits the width.
inline CounterState counter_step(CounterState s, std::uint8_t level) {
  level = level ? 1 : 0;
  if (s.last_level == 0 && level == 1) {
    const std::uint64_t mask = (std::uint64_t{1} << s.width) - 1;
    s.value = static_cast<std::uint32_t>((std::uint64_t{s.value} + 1) & mask);
  }
  s.last_level = level;
  return s;
}

// Period reset clears the count; the edge detector keeps the sampled level.
inline CounterState counter_reset(CounterState s) {
  s.value = 0;
  return s;
}

// ---- node words ------------------------------------------------------------

namespace layout {
inline constexpr unsigned kLeafBit = 63;
inline constexpr unsigned kFeatureShift = 48, kFeatureBits = 15;
inline constexpr unsigned kThresholdShift = 28, kThresholdBits = 20;
inline constexpr unsigned kLeftShift = 14, kAddressBits = 14;
inline constexpr unsigned kRightShift = 0;
inline constexpr unsigned kValueBits = 16;

constexpr std::uint64_t mask(unsigned bits) { return (std::uint64_t{1} << bits) - 1; }
}  // namespace layout

inline constexpr std::size_t kMaxNodes = std::size_t{1} << layout::kAddressBits;

struct NodeFields {
  bool leaf = false;
  std::uint32_t feature = 0;
  std::uint32_t threshold = 0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t value_mw = 0;

  static NodeFields make_leaf(std::uint32_t mw) { return {true, 0, 0, 0, 0, mw}; }
  static NodeFields make_decision(std::uint32_t feature, std::uint32_t threshold,
                                  std::uint32_t left, std::uint32_t right) {
    return {false, feature, threshold, left, right, 0};
  }

  friend bool operator==(const NodeFields&, const NodeFields&) = default;
};

inline std::uint64_t node_encode(const NodeFields& n) {
  using namespace layout;
  auto fits = [](std::uint64_t v, unsigned bits, const char* what) {
    if (v > mask(bits))
      throw InvalidArgument(std::string("node_encode: ") + what + " overflows its field");
  };
  if (n.leaf) {
    fits(n.value_mw, kValueBits, "leaf value");
    return (std::uint64_t{1} << kLeafBit) | n.value_mw;
  }
  fits(n.feature, kFeatureBits, "feature address");
  fits(n.threshold, kThresholdBits, "threshold");
  fits(n.left, kAddressBits, "left address");
  fits(n.right, kAddressBits, "right address");
  return (std::uint64_t{n.feature} << kFeatureShift) |
         (std::uint64_t{n.threshold} << kThresholdShift) |
         (std::uint64_t{n.left} << kLeftShift) | (std::uint64_t{n.right} << kRightShift);
}

inline NodeFields node_decode(std::uint64_t w) {
  using namespace layout;
  if ((w >> kLeafBit) & 1)
    return NodeFields::make_leaf(static_cast<std::uint32_t>(w & mask(kValueBits)));
  return NodeFields::make_decision(
      static_cast<std::uint32_t>((w >> kFeatureShift) & mask(kFeatureBits)),
      static_cast<std::uint32_t>((w >> kThresholdShift) & mask(kThresholdBits)),
      static_cast<std::uint32_t>((w >> kLeftShift) & mask(kAddressBits)),
      static_cast<std::uint32_t>((w >> kRightShift) & mask(kAddressBits)));
}

// ---- structure memory --------------------------------------------------------

struct TreeMemoryImage {
  std::vector<std::uint64_t> words;
  std::size_t n_nodes = 0;
  std::size_t max_depth = 0;
  std::uint32_t leaf_unit_code = 0;  // 0: 1 mW per LSB (the only defined unit)

  double leaf_unit_mw() const { return 1.0; }

  // Throws if a child address dangles, a node is reachable twice, or the
  // recorded depth is wrong.
  void validate() const {
    if (n_nodes == 0 || words.size() != n_nodes)
      throw InvalidArgument("TreeMemoryImage: node count does not match word count");
    if (n_nodes > kMaxNodes) throw InvalidArgument("TreeMemoryImage: too many nodes");
    if (leaf_unit_code != 0) throw InvalidArgument("TreeMemoryImage: unknown leaf unit");
    std::vector<char> seen(n_nodes, 0);
    std::deque<std::pair<std::size_t, std::size_t>> queue{{0, 0}};
    std::size_t depth = 0;
    while (!queue.empty()) {
      auto [addr, d] = queue.front();
      queue.pop_front();
      if (addr >= n_nodes) throw InvalidArgument("TreeMemoryImage: dangling child address");
      if (seen[addr]) throw InvalidArgument("TreeMemoryImage: node reachable twice");
      seen[addr] = 1;
      depth = std::max(depth, d);
      const auto n = node_decode(words[addr]);
      if (!n.leaf) {
        queue.emplace_back(n.left, d + 1);
        queue.emplace_back(n.right, d + 1);
      }
    }
    if (depth != max_depth) throw InvalidArgument("TreeMemoryImage: recorded depth mismatch");
  }
};

// Thresholds become floor(threshold) compared with `<=`: features are
// integers and CART thresholds are midpoints, so no decision changes. Leaf
// values are rounded to the nearest milliwatt. Nodes are laid out breadth
// first.
inline TreeMemoryImage quantize(const DecisionTree& tree) {
  require(!tree.nodes.empty(), "quantize: empty tree");
  if (tree.n_features > (std::size_t{1} << layout::kFeatureBits))
    throw InvalidArgument("quantize: feature count exceeds the address field");
  if (tree.nodes.size() > kMaxNodes)
    throw InvalidArgument("quantize: tree too large for the node address field");

  std::vector<std::size_t> order;  // tree node index by memory address
  std::vector<std::uint32_t> address(tree.nodes.size(), 0);
  std::deque<std::size_t> queue{0};
  while (!queue.empty()) {
    auto i = queue.front();
    queue.pop_front();
    address[i] = static_cast<std::uint32_t>(order.size());
    order.push_back(i);
    const auto& n = tree.nodes[i];
    if (!n.is_leaf) {
      queue.push_back(n.left);
      queue.push_back(n.right);
    }
  }

  TreeMemoryImage img;
  img.n_nodes = order.size();
  img.max_depth = 0;
  img.words.reserve(order.size());
  for (auto i : order) {
    const auto& n = tree.nodes[i];
    img.max_depth = std::max(img.max_depth, n.depth);
    if (n.is_leaf) {
      if (!(n.value >= 0.0)) throw InvalidArgument("quantize: negative leaf value");
      const double mw = std::round(n.value * 1000.0);
      if (mw > static_cast<double>(layout::mask(layout::kValueBits)))
        throw InvalidArgument("quantize: leaf value exceeds the 16-bit milliwatt range");
      img.words.push_back(node_encode(NodeFields::make_leaf(static_cast<std::uint32_t>(mw))));
    } else {
      if (!(n.threshold >= 0.0)) throw InvalidArgument("quantize: negative threshold");
      const double t = std::floor(n.threshold);
      if (t > static_cast<double>(layout::mask(layout::kThresholdBits)))
        throw InvalidArgument("quantize: threshold exceeds the counter width");
      img.words.push_back(node_encode(NodeFields::make_decision(
          n.feature, static_cast<std::uint32_t>(t), address[n.left], address[n.right])));
    }
  }
  return img;
}

struct ImageLeaf {
  std::uint32_t value_mw = 0;
  std::size_t depth = 0;
};

// Plain node walk of the decoded image.
inline ImageLeaf traverse_image(const TreeMemoryImage& img, std::span<const Count> features) {
  std::size_t addr = 0;
  std::size_t depth = 0;
  while (true) {
    if (addr >= img.words.size()) throw InvalidArgument("traverse_image: dangling address");
    const auto n = node_decode(img.words[addr]);
    if (n.leaf) return {n.value_mw, depth};
    if (n.feature >= features.size())
      throw InvalidArgument("traverse_image: feature address not covered");
    addr = features[n.feature] <= n.threshold ? n.left : n.right;
    if (++depth > img.words.size()) throw InvalidArgument("traverse_image: cycle in image");
  }
}

// ---- decision tree engine -------------------------------------------------

enum class FsmState : std::uint8_t { Idle, NodeRead, Stall, Result };

inline char state_letter(FsmState s) {
  switch (s) {
    case FsmState::Idle: return 'I';
    case FsmState::NodeRead: return 'N';
    case FsmState::Stall: return 'S';
    case FsmState::Result: return 'R';
  }
  return '?';
}

struct EngineResult {
  std::uint32_t power_mw = 0;
  std::size_t cycles = 0;
  std::vector<FsmState> trace;  // trace[0] is the idle state the call starts from
};

// Cycle-level FSM. While idle the memory output holds the root word. N
// compares the addressed feature against the threshold and issues the read of
// the selected child; S waits for that read; R emits the leaf. A leaf at depth
// d therefore takes 2d + 1 cycles.
class DecisionTreeEngine {
 public:
  using Word = std::uint64_t;
  using Address = std::uint32_t;
  using Value = std::uint32_t;
  static_assert(std::is_unsigned_v<Word> && std::is_unsigned_v<Address> &&
                    std::is_unsigned_v<Value> && std::is_unsigned_v<Count>,
                "the engine datapath is unsigned-integer only");

  explicit DecisionTreeEngine(const TreeMemoryImage& image) : memory_(image.words) {
    if (memory_.empty()) throw InvalidArgument("engine: empty structure memory");
  }

  EngineResult invoke(std::span<const Count> features) {
    EngineResult r;
    state_ = FsmState::Idle;
    r.trace.push_back(state_);
    features_.assign(features.begin(), features.end());
    data_out_ = memory_[0];
    state_ = is_leaf(data_out_) ? FsmState::Result : FsmState::NodeRead;
    const std::size_t limit = 2 * memory_.size() + 1;
    while (true) {
      r.trace.push_back(state_);
      ++r.cycles;
      if (r.cycles > limit) throw InvalidArgument("engine: malformed image (cycle)");
      switch (state_) {
        case FsmState::NodeRead: {
          const Address feature = field(data_out_, layout::kFeatureShift, layout::kFeatureBits);
          const Word threshold =
              field(data_out_, layout::kThresholdShift, layout::kThresholdBits);
          if (feature >= features_.size())
            throw InvalidArgument("engine: feature address not covered by the buffer");
          const bool go_left = Word{features_[feature]} <= threshold;
          read_addr_ = go_left ? field(data_out_, layout::kLeftShift, layout::kAddressBits)
                               : field(data_out_, layout::kRightShift, layout::kAddressBits);
          if (read_addr_ >= memory_.size())
            throw InvalidArgument("engine: malformed image (dangling address)");
          state_ = FsmState::Stall;
          break;
        }
        case FsmState::Stall:
          data_out_ = memory_[read_addr_];
          state_ = is_leaf(data_out_) ? FsmState::Result : FsmState::NodeRead;
          break;
        case FsmState::Result:
          r.power_mw = field(data_out_, 0, layout::kValueBits);
          state_ = FsmState::Idle;
          return r;
        case FsmState::Idle:
          return r;
      }
    }
  }

 private:
  static bool is_leaf(Word w) { return (w >> layout::kLeafBit) & 1u; }
  static Address field(Word w, unsigned shift, unsigned bits) {
    return static_cast<Address>((w >> shift) & layout::mask(bits));
  }

  std::vector<Word> memory_;
  std::vector<Count> features_;
  FsmState state_ = FsmState::Idle;
  Word data_out_ = 0;
  Address read_addr_ = 0;
};

inline EngineResult engine_invoke(const TreeMemoryImage& image, std::span<const Count> features) {
  return DecisionTreeEngine(image).invoke(features);
}

// "<cycle> <state>" per line, cycle 0 being the idle state.
inline std::string fsm_trace_text(const std::vector<FsmState>& trace) {
  std::string out;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out += std::to_string(i);
    out += ' ';
    out += state_letter(trace[i]);
    out += '\n';
  }
  return out;
}

// ---- monitor -----------------------------------------------------------------

struct MonitorConfig {
  std::size_t estimation_period = 300;
  unsigned counter_width = kDefaultCounterWidth;
  // Trace signal feeding counter i (= feature address i).
  std::vector<std::size_t> monitored_signals;

  std::size_t n_counters() const { return monitored_signals.size(); }

  void validate() const {
    require(estimation_period >= 1, "MonitorConfig: estimation_period must be >= 1");
    require(counter_width >= 1 && counter_width <= 32, "MonitorConfig: bad counter width");
    require(estimation_period <= (std::uint64_t{1} << counter_width),
            "MonitorConfig: estimation_period can overflow the counters");
  }
};

struct MonitorEstimate {
  std::size_t period = 0;
  std::uint32_t power_mw = 0;
  std::size_t cycles = 0;
  std::vector<Count> features;  // counter values buffered at the end of the period
};

// Feature controller: counters accumulate for one period, their values are
// buffered and handed to the engine, then the counters are reset. Trailing
// cycles that do not fill a period are ignored.
inline std::vector<MonitorEstimate> run_monitor(const ToggleTrace& trace,
                                                const TreeMemoryImage& image,
                                                const MonitorConfig& cfg) {
  cfg.validate();
  image.validate();
  require(trace.n_cycles() >= cfg.estimation_period, "run_monitor: trace shorter than one period");
  for (auto s : cfg.monitored_signals)
    require(s < trace.n_signals(), "run_monitor: monitored signal not in trace");

  std::vector<CounterState> counters(cfg.n_counters(), CounterState{cfg.counter_width, 0, 0});
  DecisionTreeEngine engine(image);
  std::vector<MonitorEstimate> out;
  const std::size_t periods = trace.n_cycles() / cfg.estimation_period;
  for (std::size_t p = 0; p < periods; ++p) {
    const std::size_t t0 = p * cfg.estimation_period;
    for (std::size_t t = t0; t < t0 + cfg.estimation_period; ++t)
      for (std::size_t c = 0; c < counters.size(); ++c)
        counters[c] = counter_step(counters[c], trace.level(cfg.monitored_signals[c], t));
    MonitorEstimate est;
    est.period = p;
    for (auto& c : counters) {
      est.features.push_back(c.value);
      c = counter_reset(c);
    }
    auto r = engine.invoke(est.features);
    est.power_mw = r.power_mw;
    est.cycles = r.cycles;
    out.push_back(std::move(est));
  }
  return out;
}

// ---- image file --------------------------------------------------------------
// 16-byte header, little endian: "DTPM", n_nodes (u32), max_depth (u32),
// leaf unit code (u32); then n_nodes 64-bit words.

inline constexpr std::string_view kImageMagic = "DTPM";

inline std::string image_to_bytes(const TreeMemoryImage& img) {
  std::string out(kImageMagic);
  auto put = [&](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  put(img.n_nodes, 4);
  put(img.max_depth, 4);
  put(img.leaf_unit_code, 4);
  for (auto w : img.words) put(w, 8);
  return out;
}

inline TreeMemoryImage image_from_bytes(std::string_view bytes) {
  if (bytes.size() < 16 || bytes.substr(0, 4) != kImageMagic)
    throw ConfigError("memory image: bad header");
  auto get = [&](std::size_t off, int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i)
      v |= std::uint64_t{static_cast<unsigned char>(bytes[off + static_cast<std::size_t>(i)])}
           << (8 * i);
    return v;
  };
  TreeMemoryImage img;
  img.n_nodes = get(4, 4);
  img.max_depth = get(8, 4);
  img.leaf_unit_code = static_cast<std::uint32_t>(get(12, 4));
  if (bytes.size() != 16 + 8 * img.n_nodes) throw ConfigError("memory image: truncated body");
  for (std::size_t i = 0; i < img.n_nodes; ++i) img.words.push_back(get(16 + 8 * i, 8));
  try {
    img.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("memory image: ") + e.what());
  }
  return img;
}

}  // namespace dtpower
