#pragma once

// End-to-end pipeline behind the `dtpower` command line tool. Every command
// reads and writes files in one output directory; each command also writes
// <command>.prov.json recording the hashes of the files it consumed and
// produced plus the hash of the configuration it ran with. Downstream
// commands refuse to use an upstream artifact whose record no longer matches
// the files on disk or the current configuration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dtpower/hwsim.hpp"
#include "dtpower/model.hpp"
#include "dtpower/pdn.hpp"
#include "dtpower/selection.hpp"
#include "dtpower/tuning.hpp"
#include "dtpower/workload.hpp"

namespace dtpower {

namespace fs = std::filesystem;

struct LutGridConfig {
  double min_power = 0.25;
  double max_power = 40.0;
  std::size_t points = 160;
};

struct EnsembleConfig {
  std::vector<DesignSpec> components;
  std::size_t n_samples = 2000;
};

struct PipelineConfig {
  std::string name = "hybrid";
  DesignSpec design;
  std::size_t period_cycles = 300;
  std::size_t n_samples = 2000;
  double train_fraction = 0.8;
  double test_fraction = 0.2;
  std::size_t top_m = 100;
  double rfe_fraction = 0.2;
  HyperParams rfe_hp{8, 5, 5, 0.001};
  HyperParams default_hp{8, 5, 5, 0.001};
  Grid grid = default_grid();
  std::size_t k_folds = 10;
  std::uint64_t seed = 1;
  // Empty: halvings of the per-fold training size.
  std::vector<std::size_t> learning_curve_sizes;
  std::size_t monitor_periods = 50;
  unsigned counter_width = kDefaultCounterWidth;
  PdnModel pdn;
  LutGridConfig lut_grid;
  EnsembleConfig ensemble;
  std::string output_dir = "out";

  // Ensemble components are single-kernel designs with one datapath each.
  PipelineConfig() {
    DesignSpec a;
    a.seed = 21;
    a.correlation_groups = 1;
    DesignSpec b;
    b.seed = 22;
    b.nonlinear_strength = 4.0;
    b.correlation_groups = 1;
    ensemble.components = {a, b};
  }

  // Independent stream seeds derived from the master seed.
  std::uint64_t stream(std::uint64_t tag) const { return mix_seed(seed, tag); }

  void validate() const {
    auto check = [](bool ok, const std::string& what) {
      if (!ok) throw ConfigError(what);
    };
    try {
      design.validate();
      rfe_hp.validate();
      default_hp.validate();
      grid.validate();
      pdn.validate();
      for (const auto& c : ensemble.components) c.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    check(std::abs(train_fraction + test_fraction - 1.0) < 1e-12,
          "train_fraction + test_fraction must equal 1");
    check(train_fraction > 0.0 && test_fraction > 0.0, "split fractions must be positive");
    check(period_cycles >= 1, "period_cycles must be >= 1");
    check(period_cycles <= (std::uint64_t{1} << counter_width),
          "period_cycles overflows the activity counters");
    check(n_samples >= 2, "n_samples must be >= 2");
    check(top_m >= 1, "top_m must be >= 1");
    check(rfe_fraction > 0.0 && rfe_fraction <= 1.0, "rfe_fraction must be in (0, 1]");
    check(k_folds >= 2, "k_folds must be >= 2");
    check(monitor_periods >= 1, "monitor_periods must be >= 1");
    check(lut_grid.points >= 2 && lut_grid.max_power > lut_grid.min_power &&
              lut_grid.min_power >= 0.0,
          "lut_grid must span a positive range with >= 2 points");
    check(ensemble.components.size() >= 1, "ensemble needs at least one component");
    check(ensemble.n_samples >= 2, "ensemble.n_samples must be >= 2");
  }
};

inline void to_json(nlohmann::json& j, const PipelineConfig& c) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& d : c.ensemble.components) comps.push_back(d);
  j = nlohmann::json{
      {"name", c.name},
      {"design", c.design},
      {"period_cycles", c.period_cycles},
      {"n_samples", c.n_samples},
      {"train_fraction", c.train_fraction},
      {"test_fraction", c.test_fraction},
      {"top_m", c.top_m},
      {"rfe_fraction", c.rfe_fraction},
      {"rfe_hp", c.rfe_hp},
      {"default_hp", c.default_hp},
      {"grid", c.grid},
      {"k_folds", c.k_folds},
      {"seed", c.seed},
      {"learning_curve_sizes", c.learning_curve_sizes},
      {"monitor_periods", c.monitor_periods},
      {"counter_width", c.counter_width},
      {"pdn", c.pdn},
      {"lut_grid",
       {{"min_power", c.lut_grid.min_power},
        {"max_power", c.lut_grid.max_power},
        {"points", c.lut_grid.points}}},
      {"ensemble", {{"components", comps}, {"n_samples", c.ensemble.n_samples}}},
      {"output_dir", c.output_dir}};
}

// Keys that are absent keep their defaults.
inline void from_json(const nlohmann::json& j, PipelineConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("name", c.name);
  get("design", c.design);
  get("period_cycles", c.period_cycles);
  get("n_samples", c.n_samples);
  get("train_fraction", c.train_fraction);
  get("test_fraction", c.test_fraction);
  get("top_m", c.top_m);
  get("rfe_fraction", c.rfe_fraction);
  get("rfe_hp", c.rfe_hp);
  get("default_hp", c.default_hp);
  get("grid", c.grid);
  get("k_folds", c.k_folds);
  get("seed", c.seed);
  get("learning_curve_sizes", c.learning_curve_sizes);
  get("monitor_periods", c.monitor_periods);
  get("counter_width", c.counter_width);
  get("pdn", c.pdn);
  get("output_dir", c.output_dir);
  if (j.contains("lut_grid")) {
    const auto& g = j.at("lut_grid");
    if (g.contains("min_power")) g.at("min_power").get_to(c.lut_grid.min_power);
    if (g.contains("max_power")) g.at("max_power").get_to(c.lut_grid.max_power);
    if (g.contains("points")) g.at("points").get_to(c.lut_grid.points);
  }
  if (j.contains("ensemble")) {
    const auto& e = j.at("ensemble");
    if (e.contains("n_samples")) e.at("n_samples").get_to(c.ensemble.n_samples);
    if (e.contains("components")) {
      c.ensemble.components.clear();
      for (const auto& d : e.at("components")) c.ensemble.components.push_back(d.get<DesignSpec>());
    }
  }
}

inline PipelineConfig load_config(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("config file '" + path + "' does not exist");
  try {
    auto j = nlohmann::json::parse(read_file(path));
    // Design specs may be given inline or as a path relative to the config.
    const auto base = fs::path(path).parent_path();
    auto resolve = [&](nlohmann::json& slot) {
      if (!slot.is_string()) return;
      const auto p = base / slot.get<std::string>();
      if (!fs::exists(p)) throw ConfigError("design spec '" + p.string() + "' does not exist");
      slot = nlohmann::json::parse(read_file(p.string()));
    };
    if (j.contains("design")) resolve(j["design"]);
    if (j.contains("ensemble") && j["ensemble"].contains("components"))
      for (auto& c : j["ensemble"]["components"]) resolve(c);
    auto cfg = j.get<PipelineConfig>();
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
}

inline Grid load_grid(const std::string& path) {
  if (!fs::exists(path)) throw ConfigError("grid file '" + path + "' does not exist");
  try {
    auto g = nlohmann::json::parse(read_file(path)).get<Grid>();
    g.validate();
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("grid '" + path + "': " + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError("grid '" + path + "': " + e.what());
  }
}

// ---- provenance ---------------------------------------------------------------

inline std::string content_hash(std::string_view bytes) { return hex64(fnv1a(bytes)); }

inline std::string json_hash(const nlohmann::json& j) { return content_hash(j.dump()); }

class ArtifactStore {
 public:
  explicit ArtifactStore(fs::path dir) : dir_(std::move(dir)) {}

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& name) const { return dir_ / name; }
  bool has_record(const std::string& stage) const { return fs::exists(record_path(stage)); }

  // Throws StaleArtifact unless `stage` ran with `config_hash` and none of
  // its inputs or outputs changed since.
  void require_fresh(const std::string& stage, const std::string& config_hash) const {
    if (!has_record(stage))
      throw StaleArtifact("missing artifacts of '" + stage + "'; run `dtpower " + stage +
                          "` first");
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(read_file(record_path(stage).string()));
    } catch (const nlohmann::json::exception&) {
      throw StaleArtifact("unreadable record for '" + stage + "'; re-run `dtpower " + stage + "`");
    }
    if (rec.value("config", "") != config_hash)
      throw StaleArtifact("'" + stage + "' artifacts were produced with a different "
                          "configuration; re-run `dtpower " + stage + "`");
    for (const auto* section : {"inputs", "outputs"}) {
      for (const auto& [name, hash] : rec.at(section).items()) {
        const auto p = path(name);
        if (!fs::exists(p) || content_hash(read_file(p.string())) != hash.get<std::string>())
          throw StaleArtifact("'" + name + "' changed since `dtpower " + stage +
                              "` ran; re-run `dtpower " + stage + "` and the commands after it");
      }
    }
  }

  std::string read(const std::string& name) {
    const auto p = path(name);
    if (!fs::exists(p)) throw StaleArtifact("missing artifact '" + name + "'");
    auto bytes = read_file(p.string());
    inputs_[name] = content_hash(bytes);
    return bytes;
  }

  void write(const std::string& name, std::string_view bytes) {
    fs::create_directories(dir_);
    write_file(path(name).string(), bytes);
    outputs_[name] = content_hash(bytes);
  }

  void write_json(const std::string& name, const nlohmann::json& j) {
    write(name, j.dump(2) + "\n");
  }

  void commit(const std::string& stage, const std::string& config_hash) {
    nlohmann::json rec{{"stage", stage}, {"config", config_hash},
                       {"inputs", inputs_}, {"outputs", outputs_}};
    fs::create_directories(dir_);
    write_file(record_path(stage).string(), rec.dump(2) + "\n");
    inputs_.clear();
    outputs_.clear();
  }

 private:
  fs::path record_path(const std::string& stage) const { return dir_ / (stage + ".prov.json"); }

  fs::path dir_;
  std::map<std::string, std::string> inputs_;
  std::map<std::string, std::string> outputs_;
};

// ---- per-stage configuration hashes ---------------------------------------------

namespace stage_config {
inline std::string gen(const PipelineConfig& c) {
  return json_hash({{"design", c.design}, {"period_cycles", c.period_cycles},
                    {"n_samples", c.n_samples}, {"train_fraction", c.train_fraction},
                    {"test_fraction", c.test_fraction}, {"seed", c.seed}});
}
inline std::string select(const PipelineConfig& c) {
  return json_hash({{"top_m", c.top_m}, {"rfe_fraction", c.rfe_fraction}, {"rfe_hp", c.rfe_hp}});
}
inline std::string tune(const PipelineConfig& c) {
  return json_hash({{"grid", c.grid}, {"k_folds", c.k_folds}, {"seed", c.seed},
                    {"top_m", c.top_m}});
}
inline std::string train(const PipelineConfig& c) {
  return json_hash({{"default_hp", c.default_hp}, {"top_m", c.top_m}});
}
inline std::string report(const PipelineConfig& c) {
  return json_hash({{"name", c.name}, {"learning_curve_sizes", c.learning_curve_sizes},
                    {"k_folds", c.k_folds}, {"seed", c.seed}});
}
inline std::string quantize(const PipelineConfig&) { return json_hash(nlohmann::json::object()); }
inline std::string monitor(const PipelineConfig& c) {
  return json_hash({{"monitor_periods", c.monitor_periods}, {"counter_width", c.counter_width},
                    {"seed", c.seed}});
}
inline std::string shed(const PipelineConfig& c) {
  return json_hash({{"pdn", c.pdn},
                    {"lut_grid", {c.lut_grid.min_power, c.lut_grid.max_power, c.lut_grid.points}}});
}
inline std::string ensemble(const PipelineConfig& c) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& d : c.ensemble.components) comps.push_back(d);
  return json_hash({{"components", comps}, {"n_samples", c.ensemble.n_samples},
                    {"period_cycles", c.period_cycles}, {"seed", c.seed},
                    {"top_m", c.top_m}, {"rfe_fraction", c.rfe_fraction},
                    {"rfe_hp", c.rfe_hp}, {"grid", c.grid}, {"k_folds", c.k_folds},
                    {"train_fraction", c.train_fraction}});
}
}  // namespace stage_config

// Stream tags for PipelineConfig::stream.
enum SeedTag : std::uint64_t {
  kSeedDataset = 1,
  kSeedSplit = 2,
  kSeedCv = 3,
  kSeedMonitor = 4,
  kSeedEnsemble = 5,
};

// ---- shared helpers -------------------------------------------------------------

struct Split80 {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

inline Split80 train_test_split(std::size_t n, double test_fraction, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  shuffle(idx, rng);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  Split80 s;
  s.test.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

struct LoadedDataset {
  Dataset all;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  Dataset train() const { return all.subset(train_rows); }
  Dataset test() const { return all.subset(test_rows); }
};

inline LoadedDataset load_dataset(ArtifactStore& store, const PipelineConfig& cfg) {
  store.require_fresh("gen", stage_config::gen(cfg));
  const auto meta = nlohmann::json::parse(store.read("dataset.json"));
  LoadedDataset ld;
  ld.all = dataset_from_csv(store.read("dataset.csv"), meta);
  meta.at("train_rows").get_to(ld.train_rows);
  meta.at("test_rows").get_to(ld.test_rows);
  return ld;
}

inline std::vector<std::size_t> default_curve_sizes(std::size_t n_train, std::size_t k) {
  const std::size_t fold_train = n_train - (n_train + k - 1) / k;
  std::vector<std::size_t> sizes;
  for (std::size_t s = fold_train; s >= 32 && sizes.size() < 5; s /= 2) sizes.push_back(s);
  std::reverse(sizes.begin(), sizes.end());
  if (sizes.empty()) sizes.push_back(fold_train);
  return sizes;
}

// Feature columns the model stages use: RFE output when `select` ran,
// otherwise the top_m most active signals of the training rows.
inline std::vector<std::size_t> model_columns(ArtifactStore& store, const PipelineConfig& cfg,
                                              const LoadedDataset& ld) {
  if (store.has_record("select")) {
    store.require_fresh("select", stage_config::select(cfg));
    const auto sel = nlohmann::json::parse(store.read("selection.json"));
    std::vector<std::size_t> cols;
    for (const auto& id : sel.at("retained")) cols.push_back(ld.all.column_of(id.get<std::string>()));
    return cols;
  }
  const auto train = ld.train();
  return rank_signals_by_activity(train, std::min(cfg.top_m, train.n_features()));
}

// ---- commands -------------------------------------------------------------------

inline void cmd_gen(const PipelineConfig& cfg, ArtifactStore& store) {
  const auto design = generate_design(cfg.design);
  auto ds = simulate_dataset(design, cfg.n_samples, cfg.period_cycles, cfg.stream(kSeedDataset));
  const auto split = train_test_split(ds.size(), cfg.test_fraction, cfg.stream(kSeedSplit));
  auto meta = dataset_metadata(ds);
  meta["name"] = cfg.name;
  meta["train_rows"] = split.train;
  meta["test_rows"] = split.test;
  store.write_json("design.json", design);
  store.write("dataset.csv", dataset_to_csv(ds));
  store.write_json("dataset.json", meta);
  store.commit("gen", stage_config::gen(cfg));
}

inline void cmd_select(const PipelineConfig& cfg, ArtifactStore& store) {
  const auto ld = load_dataset(store, cfg);
  const auto train = ld.train();
  const auto candidates = rank_signals_by_activity(train, std::min(cfg.top_m, train.n_features()));
  const auto cand = train.select_features(candidates);
  const auto r = rfe(cand, cfg.rfe_hp, cfg.rfe_fraction);
  nlohmann::json sel;
  sel["candidates"] = cand.feature_names;
  sel["retained"] = r.retained_ids;
  sel["importance"] = r.retained_importance;
  store.write_json("selection.json", sel);
  store.write("rfe_history.csv", rfe_history_csv(r, cand.feature_names));
  store.commit("select", stage_config::select(cfg));
}

inline void cmd_tune(const PipelineConfig& cfg, ArtifactStore& store) {
  const auto ld = load_dataset(store, cfg);
  const auto cols = model_columns(store, cfg, ld);
  const auto train = ld.train().select_features(cols);
  const auto cv = grid_search_cv(train, cfg.grid, cfg.k_folds, cfg.stream(kSeedCv));
  store.write("cv.csv", cv_table_csv(cv));
  store.write_json("tune.json", {{"best", cv.best},
                                 {"best_score", cv.best_score},
                                 {"k_folds", cfg.k_folds},
                                 {"combinations", cv.rows.size()},
                                 {"features", train.feature_names},
                                 {"fold_seed", cv.seed},
                                 {"folds", cv.folds}});
  store.commit("tune", stage_config::tune(cfg));
}

inline void cmd_train(const PipelineConfig& cfg, ArtifactStore& store) {
  const auto ld = load_dataset(store, cfg);
  const auto cols = model_columns(store, cfg, ld);
  HyperParams hp = cfg.default_hp;
  if (store.has_record("tune")) {
    store.require_fresh("tune", stage_config::tune(cfg));
    nlohmann::json::parse(store.read("tune.json")).at("best").get_to(hp);
  }
  const auto train = ld.train().select_features(cols);
  const auto tree = fit_tree(train, hp);
  auto tj = tree_to_json(tree);
  tj["hyperparams"] = hp;
  store.write_json("model.json", tj);
  store.write("rules.txt", export_rules(tree));
  if (train.size() > train.n_features())
    store.write_json("linear.json", linear_to_json(fit_linear(train)));
  store.commit("train", stage_config::train(cfg));
}

inline void cmd_report(const PipelineConfig& cfg, ArtifactStore& store) {
  const auto ld = load_dataset(store, cfg);
  store.require_fresh("train", stage_config::train(cfg));
  const auto tj = nlohmann::json::parse(store.read("model.json"));
  const auto tree = tree_from_json(tj);
  const auto hp = tj.at("hyperparams").get<HyperParams>();
  std::optional<LinearModel> lin;
  if (fs::exists(store.path("linear.json")))
    lin = linear_from_json(nlohmann::json::parse(store.read("linear.json")));

  std::vector<std::size_t> cols;
  for (const auto& id : tree.feature_ids) cols.push_back(ld.all.column_of(id));
  const auto train = ld.train().select_features(cols);
  const auto test = ld.test().select_features(cols);
  const auto truth = test.targets();
  const double tree_mae = mae_percent(predict_tree(tree, test), truth);
  const double lin_mae = lin ? mae_percent(predict_linear(*lin, test), truth)
                             : std::numeric_limits<double>::quiet_NaN();

  auto sizes = cfg.learning_curve_sizes;
  if (sizes.empty()) sizes = default_curve_sizes(train.size(), cfg.k_folds);
  const auto curve = learning_curve(train, hp, sizes, cfg.k_folds, cfg.stream(kSeedCv));

  auto num = [](double v) { return std::isnan(v) ? std::string("nan") : format_double(v); };
  std::string csv = "dataset,n_train,n_test,n_features,tree_test_mae_pct,linear_test_mae_pct\n";
  csv += cfg.name + "," + std::to_string(train.size()) + "," + std::to_string(test.size()) + "," +
         std::to_string(train.n_features()) + "," + num(tree_mae) + "," + num(lin_mae) + "\n";
  store.write("report.csv", csv);
  store.write("learning_curve.csv", learning_curve_csv(curve));

  char line[256];
  std::string txt = "Dynamic power model assessment (test split)\n";
  std::snprintf(line, sizeof line, "%-12s %8s %8s %10s %12s\n", "dataset", "n_test", "features",
                "Dtree MAE%", "Linear MAE%");
  txt += line;
  std::snprintf(line, sizeof line, "%-12s %8zu %8zu %10.2f %12.2f\n", cfg.name.c_str(),
                test.size(), train.n_features(), tree_mae, lin_mae);
  txt += line;
  txt += "\nLearning curve (k-fold, mean MAE%)\n";
  std::snprintf(line, sizeof line, "%8s %11s %9s %12s %10s\n", "size", "tree train", "tree val",
                "linear train", "linear val");
  txt += line;
  for (const auto& p : curve) {
    std::snprintf(line, sizeof line, "%8zu %11.2f %9.2f %12.2f %10.2f\n", p.size, p.tree_train,
                  p.tree_validation, p.linear_train, p.linear_validation);
    txt += line;
  }
  store.write("report.txt", txt);
  store.commit("report", stage_config::report(cfg));
}

inline void cmd_quantize(const PipelineConfig& cfg, ArtifactStore& store) {
  store.require_fresh("train", stage_config::train(cfg));
  const auto tree = tree_from_json(nlohmann::json::parse(store.read("model.json")));
  const auto img = quantize(tree);
  store.write("model.img", image_to_bytes(img));
  store.write_json("quantize.json", {{"n_nodes", img.n_nodes},
                                     {"max_depth", img.max_depth},
                                     {"leaf_unit_mw", img.leaf_unit_mw()},
                                     {"feature_ids", tree.feature_ids}});
  store.commit("quantize", stage_config::quantize(cfg));
}

inline void cmd_monitor(const PipelineConfig& cfg, ArtifactStore& store) {
  store.require_fresh("gen", stage_config::gen(cfg));
  store.require_fresh("train", stage_config::train(cfg));
  store.require_fresh("quantize", stage_config::quantize(cfg));
  const auto design = nlohmann::json::parse(store.read("design.json")).get<SyntheticDesign>();
  const auto tree = tree_from_json(nlohmann::json::parse(store.read("model.json")));
  const auto img = image_from_bytes(store.read("model.img"));
  const auto names = design.signal_names();

  MonitorConfig mc;
  mc.estimation_period = cfg.period_cycles;
  mc.counter_width = cfg.counter_width;
  for (const auto& id : tree.feature_ids) {
    auto it = std::find(names.begin(), names.end(), id);
    if (it == names.end()) throw ConfigError("model feature '" + id + "' is not a design net");
    mc.monitored_signals.push_back(static_cast<std::size_t>(it - names.begin()));
  }

  const auto trace =
      simulate_trace(design, cfg.monitor_periods, cfg.period_cycles, cfg.stream(kSeedMonitor));
  const auto estimates = run_monitor(trace, img, mc);

  std::string csv = "period,estimate_mw,cycles,software_mw,software_w,true_dynamic_w\n";
  std::size_t mismatches = 0;
  std::vector<Count> all(design.nets.size());
  for (const auto& e : estimates) {
    const std::size_t t0 = e.period * cfg.period_cycles;
    const std::size_t t1 = t0 + cfg.period_cycles;
    std::vector<Count> feats;
    for (auto s : mc.monitored_signals) feats.push_back(activity(trace, s, t0, t1));
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = activity(trace, i, t0, t1);
    const double sw = predict_tree(tree, feats);
    const auto sw_mw = static_cast<std::uint32_t>(std::round(sw * 1000.0));
    if (sw_mw != e.power_mw) ++mismatches;
    csv += std::to_string(e.period) + "," + std::to_string(e.power_mw) + "," +
           std::to_string(e.cycles) + "," + std::to_string(sw_mw) + "," + format_double(sw) +
           "," + format_double(dynamic_power(design, all, cfg.period_cycles)) + "\n";
  }
  store.write("monitor.csv", csv);
  if (!estimates.empty())
    store.write("fsm_trace.txt", fsm_trace_text(engine_invoke(img, estimates.front().features).trace));
  store.write_json("monitor.json", {{"periods", estimates.size()},
                                    {"mismatches", mismatches},
                                    {"max_cycles", 2 * img.max_depth + 1}});
  store.commit("monitor", stage_config::monitor(cfg));
}

inline void cmd_shed(const PipelineConfig& cfg, ArtifactStore& store) {
  store.require_fresh("gen", stage_config::gen(cfg));
  store.require_fresh("monitor", stage_config::monitor(cfg));
  const auto design = nlohmann::json::parse(store.read("design.json")).get<SyntheticDesign>();
  const auto csv = store.read("monitor.csv");
  std::vector<double> powers;
  auto lines = split(csv, '\n');
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto cells = split(lines[i], ',');
    powers.push_back(design.static_power +
                     static_cast<double>(parse_unsigned<std::uint32_t>(cells.at(1))) / 1000.0);
  }
  const auto grid = linear_grid(cfg.lut_grid.min_power, cfg.lut_grid.max_power, cfg.lut_grid.points);
  const auto lut = build_lut(cfg.pdn, grid);
  const auto r = shed(cfg.pdn, lut, powers);
  store.write_json("lut.json", {{"pdn", cfg.pdn}, {"entries", lut}});
  store.write("shed.csv", shed_csv(powers, r));
  store.write_json("shed.json", {{"eff_impv", r.improvement}, {"periods", powers.size()}});
  store.commit("shed", stage_config::shed(cfg));
}

struct EnsembleOutcome {
  double ensemble_mae = 0.0;
  double monolithic_mae = 0.0;
  std::size_t n_test = 0;
};

// Each component design gets its own dataset, feature selection and tree.
// A composite of all components (independent workloads, additive power) is
// then split 80/20; the monolithic model is retrained on the composite
// training rows and both are scored on the composite test rows.
// Candidate ranking, RFE and cross-validated tuning, as for the main model.
inline DecisionTree select_tune_fit(const PipelineConfig& cfg, const Dataset& train,
                                    std::uint64_t cv_seed) {
  const auto cand = train.select_features(
      rank_signals_by_activity(train, std::min(cfg.top_m, train.n_features())));
  const auto sel = rfe(cand, cfg.rfe_hp, cfg.rfe_fraction);
  return grid_search_cv(cand.select_features(sel.retained), cfg.grid, cfg.k_folds, cv_seed)
      .final_model;
}

inline EnsembleOutcome run_ensemble_experiment(const PipelineConfig& cfg) {
  const auto& specs = cfg.ensemble.components;
  const std::size_t n = cfg.ensemble.n_samples;
  std::vector<SyntheticDesign> designs;
  std::vector<DecisionTree> trees;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    designs.push_back(generate_design(specs[c]));
    auto ds = simulate_dataset(designs.back(), n, cfg.period_cycles,
                               cfg.stream(kSeedEnsemble + 100 * (c + 1)));
    const std::string prefix = "c" + std::to_string(c) + ".";
    for (auto& name : ds.feature_names) name = prefix + name;
    trees.push_back(select_tune_fit(cfg, ds, cfg.stream(kSeedEnsemble + 100 * (c + 1) + 2)));
  }
  const EnsembleModel em(trees);

  // Composite samples: every component simulated with its own stream.
  std::vector<Dataset> parts;
  for (std::size_t c = 0; c < specs.size(); ++c) {
    auto ds = simulate_dataset(designs[c], n, cfg.period_cycles,
                               cfg.stream(kSeedEnsemble + 100 * (c + 1) + 1));
    for (auto& name : ds.feature_names) name = "c" + std::to_string(c) + "." + name;
    parts.push_back(std::move(ds));
  }
  Dataset composite;
  composite.period_cycles = cfg.period_cycles;
  composite.clock_freq = parts.front().clock_freq;
  composite.vdd = parts.front().vdd;
  for (const auto& p : parts)
    composite.feature_names.insert(composite.feature_names.end(), p.feature_names.begin(),
                                   p.feature_names.end());
  for (std::size_t r = 0; r < n; ++r) {
    Sample s;
    s.period_cycles = cfg.period_cycles;
    for (const auto& p : parts) {
      s.features.insert(s.features.end(), p.samples[r].features.begin(), p.samples[r].features.end());
      s.true_dynamic_power += p.samples[r].true_dynamic_power;
    }
    composite.samples.push_back(std::move(s));
  }
  const auto split = train_test_split(n, cfg.test_fraction, cfg.stream(kSeedEnsemble));
  const auto train = composite.subset(split.train);
  const auto test = composite.subset(split.test);
  const auto truth = test.targets();

  // Ensemble prediction: each component reads its own columns.
  std::vector<std::vector<std::size_t>> comp_cols;
  for (const auto& t : em.components()) {
    std::vector<std::size_t> cols;
    for (const auto& id : t.feature_ids) cols.push_back(composite.column_of(id));
    comp_cols.push_back(std::move(cols));
  }
  std::vector<double> ens_pred;
  for (const auto& s : test.samples) {
    std::vector<std::vector<Count>> feats;
    for (const auto& cols : comp_cols) {
      std::vector<Count> f;
      for (auto c : cols) f.push_back(s.features[c]);
      feats.push_back(std::move(f));
    }
    std::vector<std::span<const Count>> views(feats.begin(), feats.end());
    ens_pred.push_back(predict_ensemble(em, views));
  }

  const auto mono = select_tune_fit(cfg, train, cfg.stream(kSeedEnsemble + 2));
  std::vector<std::size_t> mono_cols;
  for (const auto& id : mono.feature_ids) mono_cols.push_back(test.column_of(id));
  const auto mono_pred = predict_tree(mono, test.select_features(mono_cols));

  return {mae_percent(ens_pred, truth), mae_percent(mono_pred, truth), test.size()};
}

inline void cmd_ensemble(const PipelineConfig& cfg, ArtifactStore& store) {
  const auto r = run_ensemble_experiment(cfg);
  std::string csv = "model,test_mae_pct\n";
  csv += "ensemble," + format_double(r.ensemble_mae) + "\n";
  csv += "monolithic," + format_double(r.monolithic_mae) + "\n";
  store.write("ensemble.csv", csv);
  store.write_json("ensemble.json", {{"ensemble_mae_pct", r.ensemble_mae},
                                     {"monolithic_mae_pct", r.monolithic_mae},
                                     {"degradation_pct_points", r.ensemble_mae - r.monolithic_mae},
                                     {"n_test", r.n_test},
                                     {"components", cfg.ensemble.components.size()}});
  store.commit("ensemble", stage_config::ensemble(cfg));
}

}  // namespace dtpower
