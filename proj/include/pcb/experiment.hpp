#pragma once

// Experiment configuration (schema-versioned JSON tree) and the command
// implementations behind the `pcb` front end. Every command validates the whole
// configuration before touching the output directory.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb/bo.hpp"
#include "pcb/dataset.hpp"
#include "pcb/defense.hpp"
#include "pcb/model.hpp"
#include "pcb/poisoner.hpp"
#include "pcb/preprocess.hpp"

namespace pcb {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "PCB_OUTPUT_ROOT";

struct ConfigError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

// Error class to process exit status.
enum ExitCode : int { kExitOk = 0, kExitUsage = 2, kExitData = 3, kExitNumeric = 4 };

struct TrainSettings {
  TrainConfig cfg;
  int hidden = 64;
};

struct SearchSettings {
  BOConfig bo;
  double lambda = 0.1;
  std::size_t surrogate_epochs = 5;
  std::size_t pretrain_epochs = 10;
  std::size_t eval_size = 0;
};

struct DefenseSettings {
  std::size_t overlays = 10;
  std::size_t pool = 40;
  std::size_t suspects = 100;
  double fraction = 0.15;
  std::vector<double> sigmas{0.0, 0.05, 0.1, 0.2};
};

struct ExperimentConfig {
  std::optional<std::uint64_t> seed;
  std::string output_dir;
  SyntheticSpec synthetic = default_synthetic_spec();
  PoisonSpec poison;
  std::vector<PreprocessOp> pipeline;
  std::optional<std::uint64_t> pipeline_seed;
  TrainSettings train;
  SearchSettings search;
  DefenseSettings defense;

  ExperimentConfig() {
    poison.trigger = Trigger::in_box(Vec::Constant(1, 0.5), 0.0, 1.0);
    poison.w = 192;
    search.bo.lo = Vec::Zero(1);
    search.bo.hi = Vec::Ones(1);
  }

  void validate() const {
    synthetic.validate();
    poison.validate(synthetic.K());
    if (static_cast<int>(poison.trigger.dim()) != synthetic.c)
      throw ConfigError("config: poison.shift length must equal dataset feature dimension");
    if (search.bo.lo.size() != synthetic.c) throw ConfigError("config: search bounds must match feature dimension");
    for (const auto& op : pipeline) validate_op(op);
    train.cfg.validate();
    if (train.hidden < 2) throw ConfigError("config: train.hidden must be >= 2");
    search.bo.validate();
    if (!(search.lambda >= 0)) throw ConfigError("config: search.lambda must be >= 0");
    if (search.surrogate_epochs < 1) throw ConfigError("config: search.surrogate_epochs must be >= 1");
    if (defense.overlays < 1 || defense.pool < 1 || defense.suspects < 1)
      throw ConfigError("config: defense overlays, pool and suspects must be >= 1");
    if (!(defense.fraction >= 0 && defense.fraction <= 1)) throw ConfigError("config: defense.fraction must lie in [0, 1]");
    for (double s : defense.sigmas)
      if (!(s >= 0)) throw ConfigError("config: defense.sigmas must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// JSON <-> config

namespace detail {

inline void allow_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, _] : j.items())
    if (!allowed.count(k)) throw ConfigError("config: unknown key '" + (where == "root" ? k : where + "." + k) + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value for '" + where + "." + key + "'");
  }
}

inline Vec read_vec(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError("config: " + where + " must be a nonempty number array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError("config: " + where + " must hold numbers");
    v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  }
  return v;
}

inline json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline ShapeFamily parse_shape(const std::string& s) {
  for (auto f : {ShapeFamily::sphere, ShapeFamily::box, ShapeFamily::cylinder, ShapeFamily::torus, ShapeFamily::plane})
    if (s == to_string(f)) return f;
  throw ConfigError("config: unknown shape '" + s + "'");
}

inline PreprocessOp parse_op(const json& j) {
  if (!j.is_object() || !j.contains("op") || !j["op"].is_string())
    throw ConfigError("config: pipeline entries need an \"op\" name");
  const auto name = j["op"].get<std::string>();
  const std::string where = "pipeline." + name;
  if (name == "sor") {
    allow_keys(j, where, {"op", "k", "delta"});
    SorOp o;
    read(j, "k", o.k, where);
    read(j, "delta", o.delta, where);
    return o;
  }
  if (name == "rotation" || name == "rotation3d") {
    allow_keys(j, where, {"op", "max_deg", "rotate_features"});
    double deg = name == "rotation" ? 20.0 : 360.0;
    bool rf = false;
    read(j, "max_deg", deg, where);
    read(j, "rotate_features", rf, where);
    if (name == "rotation") return RotationOp{deg, rf};
    return Rotation3dOp{deg, rf};
  }
  if (name == "scaling") {
    allow_keys(j, where, {"op", "lo", "hi"});
    ScalingOp o;
    read(j, "lo", o.lo, where);
    read(j, "hi", o.hi, where);
    return o;
  }
  if (name == "shift") {
    allow_keys(j, where, {"op", "extent"});
    ShiftOp o;
    read(j, "extent", o.extent, where);
    return o;
  }
  if (name == "dropout") {
    allow_keys(j, where, {"op", "max_frac"});
    DropoutOp o;
    read(j, "max_frac", o.max_frac, where);
    return o;
  }
  if (name == "jitter") {
    allow_keys(j, where, {"op", "sigma"});
    JitterOp o;
    read(j, "sigma", o.sigma, where);
    return o;
  }
  throw ConfigError("config: unknown pipeline op '" + name + "'");
}

inline json op_json(const PreprocessOp& op) {
  return std::visit(
      [](const auto& o) -> json {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, SorOp>) return {{"op", "sor"}, {"k", o.k}, {"delta", o.delta}};
        else if constexpr (std::is_same_v<T, RotationOp>)
          return {{"op", "rotation"}, {"max_deg", o.max_deg}, {"rotate_features", o.rotate_features}};
        else if constexpr (std::is_same_v<T, Rotation3dOp>)
          return {{"op", "rotation3d"}, {"max_deg", o.max_deg}, {"rotate_features", o.rotate_features}};
        else if constexpr (std::is_same_v<T, ScalingOp>) return {{"op", "scaling"}, {"lo", o.lo}, {"hi", o.hi}};
        else if constexpr (std::is_same_v<T, ShiftOp>) return {{"op", "shift"}, {"extent", o.extent}};
        else if constexpr (std::is_same_v<T, DropoutOp>) return {{"op", "dropout"}, {"max_frac", o.max_frac}};
        else return {{"op", "jitter"}, {"sigma", o.sigma}};
      },
      op);
}

inline GuardMode parse_guard(const json& j, const std::string& where) {
  allow_keys(j, where, {"kind", "lo", "hi"});
  std::string kind = "clip";
  double lo = 0.0, hi = 1.0;
  read(j, "kind", kind, where);
  read(j, "lo", lo, where);
  read(j, "hi", hi, where);
  if (kind == "unit") return GuardMode::unit();
  if (kind != "clip") throw ConfigError("config: guard kind must be clip or unit");
  if (!(lo < hi)) throw ConfigError("config: clip guard needs lo < hi");
  return GuardMode::clip(lo, hi);
}

inline json guard_json(const GuardMode& g) {
  if (g.kind == GuardMode::Kind::unit) return {{"kind", "unit"}};
  return {{"kind", "clip"}, {"lo", g.lo}, {"hi", g.hi}};
}

}  // namespace detail

inline json poison_spec_json(const PoisonSpec& p) {
  return {{"shift", detail::vec_json(p.trigger.shift)},
          {"lo", detail::vec_json(p.trigger.lo)},
          {"hi", detail::vec_json(p.trigger.hi)},
          {"w", p.w},
          {"selection", to_string(p.selection)},
          {"selection_seed", p.selection_seed},
          {"random_start", p.random_start},
          {"guard", detail::guard_json(p.guard)},
          {"target", p.target},
          {"rate", p.rate},
          {"mode", to_string(p.mode)}};
}

// Fills `p` from `j`; keys absent from `j` keep their current value.
inline void parse_poison_spec(const json& j, PoisonSpec& p) {
  const std::string where = "poison";
  detail::allow_keys(j, where,
                     {"shift", "lo", "hi", "w", "selection", "selection_seed", "random_start", "guard", "target", "rate",
                      "mode"});
  if (j.contains("shift")) {
    const Vec s = detail::read_vec(j["shift"], "poison.shift");
    // Bounds default to [0, 1] per dimension unless given.
    p.trigger = Trigger{s, Vec::Zero(s.size()), Vec::Ones(s.size())};
  }
  if (j.contains("lo")) p.trigger.lo = detail::read_vec(j["lo"], "poison.lo");
  if (j.contains("hi")) p.trigger.hi = detail::read_vec(j["hi"], "poison.hi");
  detail::read(j, "w", p.w, where);
  if (j.contains("selection")) {
    const auto s = j["selection"].get<std::string>();
    if (s != "fps" && s != "random") throw ConfigError("config: poison.selection must be fps or random");
    p.selection = s == "fps" ? Selection::fps : Selection::random;
  }
  detail::read(j, "selection_seed", p.selection_seed, where);
  detail::read(j, "random_start", p.random_start, where);
  if (j.contains("guard")) p.guard = detail::parse_guard(j["guard"], "poison.guard");
  detail::read(j, "target", p.target, where);
  detail::read(j, "rate", p.rate, where);
  if (j.contains("mode")) {
    const auto m = j["mode"].get<std::string>();
    if (m != "all_to_one" && m != "all_to_all") throw ConfigError("config: poison.mode must be all_to_one or all_to_all");
    p.mode = m == "all_to_one" ? AttackMode::all_to_one : AttackMode::all_to_all;
  }
  try {
    p.trigger.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig parse_config(const json& j) {
  using detail::allow_keys;
  using detail::read;
  allow_keys(j, "root",
             {"schema_version", "seed", "output_dir", "dataset", "poison", "pipeline", "train", "search", "defense"});
  if (!j.contains("schema_version")) throw ConfigError("config: missing schema_version");
  if (!j["schema_version"].is_number_integer() || j["schema_version"].get<int>() != kSchemaVersion)
    throw ConfigError("config: unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");

  ExperimentConfig c;
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !(j["seed"].is_number_integer() && j["seed"].get<long long>() >= 0))
      throw ConfigError("config: seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  read(j, "output_dir", c.output_dir, "root");

  if (j.contains("dataset")) {
    const auto& d = j["dataset"];
    allow_keys(d, "dataset", {"classes", "n", "c", "train_per_class", "test_per_class", "noise"});
    auto& s = c.synthetic;
    read(d, "n", s.n, "dataset");
    read(d, "c", s.c, "dataset");
    read(d, "train_per_class", s.train_per_class, "dataset");
    read(d, "test_per_class", s.test_per_class, "dataset");
    read(d, "noise", s.noise, "dataset");
    if (d.contains("classes")) {
      if (!d["classes"].is_array()) throw ConfigError("config: dataset.classes must be an array");
      s.classes.clear();
      for (const auto& cl : d["classes"]) {
        allow_keys(cl, "dataset.classes[]", {"shape", "law", "a", "b"});
        ClassSpec spec;
        std::string shape = "sphere", law = "beta";
        read(cl, "shape", shape, "dataset.classes[]");
        read(cl, "law", law, "dataset.classes[]");
        spec.shape = detail::parse_shape(shape);
        if (law == "normals") {
          spec.features = FeatureLaw::normals();
        } else if (law == "beta") {
          double a = 2, b = 2;
          read(cl, "a", a, "dataset.classes[]");
          read(cl, "b", b, "dataset.classes[]");
          spec.features = FeatureLaw::beta(a, b);
        } else {
          throw ConfigError("config: feature law must be beta or normals");
        }
        s.classes.push_back(spec);
      }
    }
    // The default trigger follows the feature dimension.
    if (s.c != 1 && !(j.contains("poison") && j["poison"].contains("shift")))
      c.poison.trigger = Trigger::in_box(Vec::Constant(s.c, 0.5), 0.0, 1.0);
    if (s.c != 1 && !(j.contains("search") && j["search"].contains("lo"))) {
      c.search.bo.lo = Vec::Zero(s.c);
      c.search.bo.hi = Vec::Ones(s.c);
    }
  }
  if (j.contains("poison")) parse_poison_spec(j["poison"], c.poison);

  if (j.contains("pipeline")) {
    const auto& p = j["pipeline"];
    allow_keys(p, "pipeline", {"ops", "standard_prefix", "seed"});
    if (p.contains("ops") && p.contains("standard_prefix"))
      throw ConfigError("config: give pipeline.ops or pipeline.standard_prefix, not both");
    if (p.contains("ops")) {
      if (!p["ops"].is_array()) throw ConfigError("config: pipeline.ops must be an array");
      for (const auto& op : p["ops"]) c.pipeline.push_back(detail::parse_op(op));
    }
    if (p.contains("standard_prefix")) {
      std::size_t len = 0;
      read(p, "standard_prefix", len, "pipeline");
      if (len > 7) throw ConfigError("config: pipeline.standard_prefix must be <= 7");
      c.pipeline = standard_pipeline_prefix(len, 0).ops;
    }
    if (p.contains("seed")) c.pipeline_seed = p["seed"].get<std::uint64_t>();
  }

  if (j.contains("train")) {
    const auto& t = j["train"];
    const std::string w = "train";
    allow_keys(t, w,
               {"epochs", "batch_size", "lr", "optimizer", "momentum", "decay_every", "decay_gamma", "hidden",
                "adam_beta1", "adam_beta2", "adam_eps"});
    auto& cfg = c.train.cfg;
    read(t, "epochs", cfg.epochs, w);
    read(t, "batch_size", cfg.batch_size, w);
    read(t, "lr", cfg.lr, w);
    read(t, "momentum", cfg.momentum, w);
    read(t, "decay_every", cfg.decay_every, w);
    read(t, "decay_gamma", cfg.decay_gamma, w);
    read(t, "adam_beta1", cfg.adam_beta1, w);
    read(t, "adam_beta2", cfg.adam_beta2, w);
    read(t, "adam_eps", cfg.adam_eps, w);
    read(t, "hidden", c.train.hidden, w);
    if (t.contains("optimizer")) {
      const auto o = t["optimizer"].get<std::string>();
      if (o != "sgd_momentum" && o != "adam") throw ConfigError("config: train.optimizer must be sgd_momentum or adam");
      cfg.optimizer = o == "adam" ? Optimizer::adam : Optimizer::sgd_momentum;
    }
  }

  if (j.contains("search")) {
    const auto& s = j["search"];
    const std::string w = "search";
    allow_keys(s, w,
               {"lo", "hi", "init_count", "iterations", "candidates", "refine_starts", "fit_hyper", "lambda",
                "surrogate_epochs", "pretrain_epochs", "eval_size"});
    if (s.contains("lo")) c.search.bo.lo = detail::read_vec(s["lo"], "search.lo");
    if (s.contains("hi")) c.search.bo.hi = detail::read_vec(s["hi"], "search.hi");
    read(s, "init_count", c.search.bo.init_count, w);
    read(s, "iterations", c.search.bo.iterations, w);
    read(s, "candidates", c.search.bo.candidates, w);
    read(s, "refine_starts", c.search.bo.refine_starts, w);
    read(s, "fit_hyper", c.search.bo.fit_hyper, w);
    read(s, "lambda", c.search.lambda, w);
    read(s, "surrogate_epochs", c.search.surrogate_epochs, w);
    read(s, "pretrain_epochs", c.search.pretrain_epochs, w);
    read(s, "eval_size", c.search.eval_size, w);
  }

  if (j.contains("defense")) {
    const auto& d = j["defense"];
    const std::string w = "defense";
    allow_keys(d, w, {"overlays", "pool", "suspects", "fraction", "sigmas"});
    read(d, "overlays", c.defense.overlays, w);
    read(d, "pool", c.defense.pool, w);
    read(d, "suspects", c.defense.suspects, w);
    read(d, "fraction", c.defense.fraction, w);
    read(d, "sigmas", c.defense.sigmas, w);
  }

  try {
    c.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline json load_config_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Output directories

// Resolution order: explicit path, config output_dir, $PCB_OUTPUT_ROOT/<verb>,
// ./pcb_runs/<verb>.
inline std::filesystem::path resolve_output_dir(const std::string& flag, const ExperimentConfig& cfg,
                                                const std::string& verb) {
  if (!flag.empty()) return flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / verb;
  return std::filesystem::path("pcb_runs") / verb;
}

// A `.partial` marker lives in the directory until finish(); timestamps go to
// the run.log sidecar only, so every other artifact is reproducible.
class RunDir {
 public:
  RunDir(std::filesystem::path dir, const std::string& verb) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    std::ofstream(dir_ / ".partial") << verb << '\n';
    log("start " + verb);
  }

  const std::filesystem::path& path() const { return dir_; }
  std::filesystem::path file(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, const std::string& content) const {
    binio::write_file_atomic(dir_ / name, content);
  }
  void write_json(const std::string& name, const json& j) const { write(name, j.dump(2) + "\n"); }

  void log(const std::string& msg) const {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ofstream(dir_ / "run.log", std::ios::app) << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << msg << '\n';
  }

  void finish() const {
    log("done");
    std::filesystem::remove(dir_ / ".partial");
  }

 private:
  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Commands

inline std::uint64_t require_seed(const ExperimentConfig& cfg, const std::string& verb) {
  if (!cfg.seed) throw ConfigError(verb + ": --seed is required (or set \"seed\" in the config)");
  return *cfg.seed;
}

// Stage-specific streams derived from the run seed.
enum SeedStage : std::uint64_t { kStageGen = 1, kStagePoison, kStageInit, kStageShuffle, kStagePipeline, kStageSearch, kStageDefend };

inline std::uint64_t stage_seed(std::uint64_t seed, SeedStage stage) { return derive_seed(seed, {stage}); }

inline Pipeline make_pipeline(const ExperimentConfig& cfg, std::uint64_t seed) {
  return Pipeline{cfg.pipeline, cfg.pipeline_seed.value_or(stage_seed(seed, kStagePipeline))};
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,train_acc\n";
  for (const auto& e : history) os << e.epoch << ',' << e.loss << ',' << e.train_acc << '\n';
  return os.str();
}

inline void cmd_gen(const ExperimentConfig& cfg, const RunDir& out) {
  const auto seed = require_seed(cfg, "gen");
  const auto data = gen_synthetic(cfg.synthetic, stage_seed(seed, kStageGen));
  save_dataset(data.train, out.file("train.pcbd"));
  save_dataset(data.test, out.file("test.pcbd"));
  out.log("train " + std::to_string(data.train.size()) + " clouds, test " + std::to_string(data.test.size()));
}

inline json poison_metadata(const PoisonRecord& rec) {
  return {{"seed", rec.seed}, {"count", rec.indices.size()}, {"indices", rec.indices}, {"spec", poison_spec_json(rec.spec)}};
}

inline void cmd_poison(const ExperimentConfig& cfg, const std::filesystem::path& data_path, const RunDir& out) {
  const auto seed = require_seed(cfg, "poison");
  const auto clean = load_dataset(data_path);
  const auto res = poison_dataset(clean, cfg.poison, stage_seed(seed, kStagePoison));
  save_dataset(res.dataset, out.file("poisoned.pcbd"));
  out.write_json("poison.json", poison_metadata(*res.dataset.poison));
}

inline Checkpoint train_checkpoint(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed,
                                   std::vector<EpochRecord>* history = nullptr, const Pipeline* pipeline = nullptr) {
  TrainConfig tc = cfg.train.cfg;
  tc.seed = stage_seed(seed, kStageShuffle);
  tc.pipeline = pipeline ? *pipeline : make_pipeline(cfg, seed);
  const auto init_seed = stage_seed(seed, kStageInit);
  auto res = train(init_params(data.c, data.K, cfg.train.hidden, init_seed), data, tc);
  if (history) *history = res.history;
  return Checkpoint{std::move(res.params), {init_seed, tc.seed, tc.pipeline.seed}};
}

inline void cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& data_path, const RunDir& out) {
  const auto seed = require_seed(cfg, "train");
  const auto data = load_dataset(data_path);
  std::vector<EpochRecord> history;
  const auto ck = train_checkpoint(cfg, data, seed, &history);
  save_checkpoint(ck, out.file("model.pcbm"));
  out.write("history.csv", history_csv(history));
}

// Trigger used for ASR: the record of a poisoned dataset when given, else the
// configured spec.
inline PoisonSpec trigger_spec(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& poisoned) {
  if (!poisoned) return cfg.poison;
  const auto d = load_dataset(*poisoned);
  if (!d.poison) throw FormatError(poisoned->string() + " carries no poison record");
  return d.poison->spec;
}

inline json eval_metrics(const ExperimentConfig& cfg, const Params& params, const Dataset& test, const PoisonSpec& spec) {
  const Pipeline inference = inference_pipeline(Pipeline{cfg.pipeline, 0});
  return {{"acc", evaluate_acc(params, test, inference)},
          {"asr", evaluate_asr(params, test, spec, {}, inference)},
          {"test_size", test.size()},
          {"inference_ops", inference.ops.size()}};
}

inline void cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& model_path,
                     const std::filesystem::path& test_path, const std::optional<std::filesystem::path>& poisoned,
                     const RunDir& out) {
  const auto ck = load_checkpoint(model_path);
  const auto test = load_dataset(test_path);
  if (test.c != ck.params.c() || test.K != ck.params.K()) throw FormatError("eval: model and test set dims differ");
  out.write_json("metrics.json", eval_metrics(cfg, ck.params, test, trigger_spec(cfg, poisoned)));
}

inline void cmd_search(const ExperimentConfig& cfg, const std::filesystem::path& data_path, const RunDir& out) {
  const auto seed = require_seed(cfg, "search");
  const auto clean = load_dataset(data_path);
  if (clean.poison) throw FormatError("search: expects a clean training set");

  // Clean-pretrained surrogate, then a short warm-started retrain per candidate.
  ExperimentConfig pre = cfg;
  pre.train.cfg.epochs = cfg.search.pretrain_epochs;
  pre.pipeline.clear();
  const auto base = train_checkpoint(pre, take_prefix(clean, cfg.search.eval_size), seed);

  SurrogateConfig sur;
  sur.poison = cfg.poison;
  sur.poison.trigger.lo = cfg.search.bo.lo;
  sur.poison.trigger.hi = cfg.search.bo.hi;
  sur.poison_seed = stage_seed(seed, kStagePoison);
  sur.train = cfg.train.cfg;
  sur.train.epochs = cfg.search.surrogate_epochs;
  sur.train.seed = stage_seed(seed, kStageShuffle);
  sur.warm_start = base.params;
  sur.lambda = cfg.search.lambda;
  sur.eval_size = cfg.search.eval_size;

  BOConfig bo = cfg.search.bo;
  bo.seed = stage_seed(seed, kStageSearch);
  try {
    const auto res = search_trigger(bo, clean, sur);
    out.write("trace.csv", trace_csv(res));
    out.write_json("trigger.json", json{{"shift", detail::vec_json(res.best_s)},
                                   {"objective", res.best_value},
                                   {"evaluations", res.trace.size()}});
  } catch (const SearchAborted& e) {
    out.write("trace.csv", trace_csv(SearchResult{Vec(), 0, e.trace}));
    throw;
  }
}

struct DefendRequest {
  std::filesystem::path train_path;  // poisoned training set
  std::filesystem::path test_path;
  std::optional<std::filesystem::path> model_path;  // required for strip/adaptive
  bool sweep = false;
  bool strip = false;
  bool spectral = false;
  bool adaptive = false;
};

inline std::string op_list(const Pipeline& p) {
  std::string s;
  for (const auto& op : p.ops) s += (s.empty() ? "" : "+") + op_name(op);
  return s.empty() ? "none" : s;
}

// Rows of the cumulative sweep: prefixes of the standard op list, length 0..7.
inline std::string defense_sweep_csv(const ExperimentConfig& cfg, const Dataset& train_set, const Dataset& test,
                                     std::uint64_t seed) {
  if (!train_set.poison) throw FormatError("defend: the training set carries no poison record");
  std::ostringstream os;
  os.precision(17);
  os << "prefix_length,ops,acc,asr\n";
  const auto pipeline_seed = cfg.pipeline_seed.value_or(stage_seed(seed, kStagePipeline));
  for (std::size_t len = 0; len <= 7; ++len) {
    const auto p = standard_pipeline_prefix(len, pipeline_seed);
    const auto ck = train_checkpoint(cfg, train_set, seed, nullptr, &p);
    const auto inf = inference_pipeline(p);
    os << len << ',' << op_list(p) << ',' << evaluate_acc(ck.params, test, inf) << ','
       << evaluate_asr(ck.params, test, train_set.poison->spec, {}, inf) << '\n';
  }
  return os.str();
}

// The first `pool` test clouds form the benign overlay pool; suspects are the
// next `suspects` clean clouds plus `suspects` triggered non-target clouds.
inline DetectionReport strip_report(const ExperimentConfig& cfg, const Params& params, const Dataset& test,
                                    const PoisonSpec& spec, std::uint64_t seed) {
  const auto& d = cfg.defense;
  if (test.size() < d.pool + 1) throw InvalidArgument("defend: test set smaller than the STRIP pool");
  std::vector<PointCloud> pool;
  for (std::size_t i = 0; i < d.pool; ++i) pool.push_back(test.clouds[i].cloud);
  std::vector<double> scores;
  std::vector<bool> flags;
  Rng rng = make_rng(seed, {kStageDefend, 0x57});
  for (std::size_t i = d.pool; i < test.size() && i < d.pool + d.suspects; ++i) {
    scores.push_back(strip_score(params, test.clouds[i].cloud, pool, d.overlays, rng));
    flags.push_back(false);
  }
  std::size_t added = 0;
  for (std::size_t i = d.pool; i < test.size() && added < d.suspects; ++i) {
    const auto& lc = test.clouds[i];
    if (spec.mode == AttackMode::all_to_one && lc.label == spec.target) continue;
    scores.push_back(strip_score(params, implant_trigger(lc.cloud, spec, i), pool, d.overlays, rng));
    flags.push_back(true);
    ++added;
  }
  return detection_report(std::move(scores), std::move(flags), {true, d.fraction});
}

inline DetectionReport spectral_report(const ExperimentConfig& cfg, const Params& params, const Dataset& train_set) {
  std::vector<PointCloud> clouds;
  std::vector<bool> flags;
  for (const auto& lc : train_set.clouds) {
    clouds.push_back(lc.cloud);
    flags.push_back(lc.poisoned);
  }
  return detection_report(spectral_scores(params, clouds), std::move(flags), {false, cfg.defense.fraction});
}

inline std::string adaptive_csv(const ExperimentConfig& cfg, const Params& params, const Dataset& test,
                                const PoisonSpec& spec, std::uint64_t seed) {
  std::ostringstream os;
  os.precision(17);
  os << "sigma,acc,asr\n";
  for (std::size_t k = 0; k < cfg.defense.sigmas.size(); ++k) {
    const double sigma = cfg.defense.sigmas[k];
    auto noisy = [&](const PointCloud& c, std::size_t i) {
      Rng rng = make_rng(seed, {kStageDefend, 0xAD, k, i});
      return adaptive_noise(c, sigma, spec.guard, rng);
    };
    std::size_t hit = 0;
    for (std::size_t i = 0; i < test.size(); ++i)
      hit += predict(params, noisy(test.clouds[i].cloud, i)) == test.clouds[i].label ? 1 : 0;
    const double acc = static_cast<double>(hit) / static_cast<double>(test.size());
    const double asr = attack_success_rate(
        params, test, [&](int y) { return spec.mode == AttackMode::all_to_all || y != spec.target; },
        [&](const PointCloud& c, std::size_t i) { return noisy(implant_trigger(c, spec, i), i); },
        [&](int y) { return spec.mode == AttackMode::all_to_one ? spec.target : all_to_all_target(y, test.K); });
    os << sigma << ',' << acc << ',' << asr << '\n';
  }
  return os.str();
}

inline void cmd_defend(const ExperimentConfig& cfg, const DefendRequest& req, const RunDir& out) {
  const auto seed = require_seed(cfg, "defend");
  if (!(req.sweep || req.strip || req.spectral || req.adaptive))
    throw ConfigError("defend: choose at least one of --sweep, --strip, --spectral, --adaptive");
  if ((req.strip || req.spectral || req.adaptive) && !req.model_path)
    throw ConfigError("defend: --strip, --spectral and --adaptive need --model");
  const auto train_set = load_dataset(req.train_path);
  const auto test = load_dataset(req.test_path);
  const PoisonSpec spec = train_set.poison ? train_set.poison->spec : cfg.poison;

  if (req.sweep) out.write("sweep.csv", defense_sweep_csv(cfg, train_set, test, seed));
  if (!req.model_path) return;
  const auto ck = load_checkpoint(*req.model_path);
  if (req.strip) {
    const auto r = strip_report(cfg, ck.params, test, spec, seed);
    out.write_json("strip.json", to_json(r));
    out.write("strip.csv", to_csv(r));
  }
  if (req.spectral) {
    const auto r = spectral_report(cfg, ck.params, train_set);
    out.write_json("spectral.json", to_json(r));
    out.write("spectral.csv", to_csv(r));
  }
  if (req.adaptive) out.write("adaptive.csv", adaptive_csv(cfg, ck.params, test, spec, seed));
}

// One CSV row per configuration found in the run directories: metrics.json
// contributes one row, sweep.csv one row per pipeline prefix.
inline std::string report_csv(const std::vector<std::filesystem::path>& runs) {
  std::ostringstream os;
  os.precision(17);
  os << "run,configuration,acc,asr\n";
  for (const auto& run : runs) {
    bool any = false;
    if (std::filesystem::exists(run / ".partial")) throw FormatError("report: " + run.string() + " is incomplete");
    if (std::filesystem::exists(run / "metrics.json")) {
      std::ifstream in(run / "metrics.json");
      const auto j = json::parse(in, nullptr, false);
      if (j.is_discarded() || !j.contains("acc") || !j.contains("asr"))
        throw FormatError("report: bad metrics.json in " + run.string());
      os << run.filename().string() << ",eval," << j["acc"].get<double>() << ',' << j["asr"].get<double>() << '\n';
      any = true;
    }
    if (std::filesystem::exists(run / "sweep.csv")) {
      std::ifstream in(run / "sweep.csv");
      std::string line;
      std::getline(in, line);
      while (std::getline(in, line)) {
        std::stringstream ls(line);
        std::string len, ops, acc, asr;
        if (!std::getline(ls, len, ',') || !std::getline(ls, ops, ',') || !std::getline(ls, acc, ',') ||
            !std::getline(ls, asr, ','))
          throw FormatError("report: bad sweep.csv in " + run.string());
        os << run.filename().string() << ',' << ops << ',' << acc << ',' << asr << '\n';
      }
      any = true;
    }
    if (!any) throw FormatError("report: no metrics.json or sweep.csv in " + run.string());
  }
  return os.str();
}

inline void cmd_report(const std::vector<std::filesystem::path>& runs, const RunDir& out) {
  if (runs.empty()) throw ConfigError("report: give at least one run directory");
  out.write("report.csv", report_csv(runs));
}

}  // namespace pcb
