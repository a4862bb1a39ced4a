// pcb: command-line front end for the point-cloud backdoor lab.

#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "pcb/experiment.hpp"

namespace {

using pcb::json;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> set;  // key.path=json overrides
};

// `a.b.c=value`; the value is parsed as JSON and falls back to a string.
void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw pcb::ConfigError("--set expects key.path=value, got '" + assignment + "'");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &root;
  std::size_t start = 0;
  for (;;) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw pcb::ConfigError("--set: empty key in '" + path + "'");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key)) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

pcb::ExperimentConfig build_config(const Common& c, const json& flag_patch) {
  json root = c.config.empty() ? json{{"schema_version", pcb::kSchemaVersion}} : pcb::load_config_json(c.config);
  if (!root.is_object()) throw pcb::ConfigError("config: top level must be an object");
  root.merge_patch(flag_patch);
  for (const auto& s : c.set) apply_override(root, s);
  if (c.seed) root["seed"] = *c.seed;
  return pcb::parse_config(root);
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON experiment config")->check(CLI::ExistingFile);
  app->add_option("--seed", c.seed, "run seed (required for stochastic verbs unless set in the config)");
  app->add_option("-o,--out", c.out, "output directory");
  app->add_option("--set", c.set, "override a config value: key.path=json");
}

template <class T>
void patch(json& j, const std::optional<T>& v, std::initializer_list<const char*> path) {
  if (!v) return;
  json* node = &j;
  auto it = path.begin();
  for (; std::next(it) != path.end(); ++it) node = &(*node)[*it];
  (*node)[*it] = *v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Feature-shift backdoor lab for point clouds"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "pcb 1.0");

  Common common;
  json flags = json::object();

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic train/test dataset");
  add_common(gen, common);
  std::optional<int> n, train_per_class, test_per_class;
  gen->add_option("--points", n, "points per cloud");
  gen->add_option("--train-per-class", train_per_class);
  gen->add_option("--test-per-class", test_per_class);

  // poison
  auto* poison = app.add_subcommand("poison", "poison a training set");
  add_common(poison, common);
  std::string data;
  std::optional<double> rate, shift;
  std::optional<std::size_t> w;
  std::optional<int> target;
  std::optional<std::string> mode;
  poison->add_option("--data", data, "clean .pcbd training set")->required()->check(CLI::ExistingFile);
  poison->add_option("--rate", rate, "poison rate");
  poison->add_option("--shift", shift, "uniform shift applied to every feature channel");
  poison->add_option("-w,--subset", w, "points per cloud in the shifted subset");
  poison->add_option("--target", target, "target label");
  poison->add_option("--mode", mode)->check(CLI::IsMember({"all_to_one", "all_to_all"}));

  // train
  auto* trn = app.add_subcommand("train", "train a classifier");
  add_common(trn, common);
  std::optional<std::size_t> epochs, prefix;
  trn->add_option("--data", data, ".pcbd training set")->required()->check(CLI::ExistingFile);
  trn->add_option("--epochs", epochs);
  trn->add_option("--pipeline-prefix", prefix, "use the first N standard preprocessing ops (0-7)");

  // eval
  auto* ev = app.add_subcommand("eval", "ACC/ASR of a checkpoint");
  add_common(ev, common);
  std::string model, test;
  std::optional<std::string> poisoned;
  ev->add_option("--model", model)->required()->check(CLI::ExistingFile);
  ev->add_option("--test", test)->required()->check(CLI::ExistingFile);
  ev->add_option("--poisoned", poisoned, "poisoned .pcbd whose trigger is evaluated")->check(CLI::ExistingFile);
  ev->add_option("--pipeline-prefix", prefix, "apply the prefix's inference part (SOR) to test inputs");

  // search
  auto* search = app.add_subcommand("search", "Bayesian-optimization trigger search");
  add_common(search, common);
  std::optional<std::size_t> iterations;
  search->add_option("--data", data, "clean .pcbd training set")->required()->check(CLI::ExistingFile);
  search->add_option("--iterations", iterations, "BO steps after the initial design");

  // defend
  auto* defend = app.add_subcommand("defend", "preprocessing sweep and detection defenses");
  add_common(defend, common);
  pcb::DefendRequest req;
  std::optional<std::string> defend_model;
  defend->add_option("--data", data, "poisoned .pcbd training set")->required()->check(CLI::ExistingFile);
  defend->add_option("--test", test)->required()->check(CLI::ExistingFile);
  defend->add_option("--model", defend_model)->check(CLI::ExistingFile);
  defend->add_flag("--sweep", req.sweep, "cumulative preprocessing sweep (8 rows)");
  defend->add_flag("--strip", req.strip, "STRIP entropy detection");
  defend->add_flag("--spectral", req.spectral, "spectral-signature detection");
  defend->add_flag("--adaptive", req.adaptive, "adaptive feature-noise defense");

  // report
  auto* report = app.add_subcommand("report", "aggregate run outputs into one CSV");
  add_common(report, common);
  std::vector<std::string> runs;
  report->add_option("runs", runs, "run directories")->required()->check(CLI::ExistingDirectory);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : pcb::kExitUsage;
  }

  const auto* sub = app.get_subcommands().front();
  const std::string verb = sub->get_name();
  try {
    patch(flags, n, {"dataset", "n"});
    patch(flags, train_per_class, {"dataset", "train_per_class"});
    patch(flags, test_per_class, {"dataset", "test_per_class"});
    patch(flags, rate, {"poison", "rate"});
    patch(flags, w, {"poison", "w"});
    patch(flags, target, {"poison", "target"});
    patch(flags, mode, {"poison", "mode"});
    patch(flags, epochs, {"train", "epochs"});
    patch(flags, iterations, {"search", "iterations"});
    // A null in a merge patch deletes the key, so the flag replaces any op list.
    if (prefix) flags["pipeline"] = json{{"standard_prefix", *prefix}, {"ops", nullptr}};

    json file_root = common.config.empty() ? json::object() : pcb::load_config_json(common.config);
    int c = 1;
    if (file_root.contains("dataset") && file_root["dataset"].contains("c")) c = file_root["dataset"]["c"].get<int>();
    if (shift) flags["poison"]["shift"] = std::vector<double>(static_cast<std::size_t>(std::max(c, 1)), *shift);

    const auto cfg = build_config(common, flags);
    const bool stochastic = verb == "gen" || verb == "poison" || verb == "train" || verb == "search" || verb == "defend";
    if (stochastic) pcb::require_seed(cfg, verb);

    const pcb::RunDir out(pcb::resolve_output_dir(common.out, cfg, verb), verb);
    if (verb == "gen") {
      pcb::cmd_gen(cfg, out);
    } else if (verb == "poison") {
      pcb::cmd_poison(cfg, data, out);
    } else if (verb == "train") {
      pcb::cmd_train(cfg, data, out);
    } else if (verb == "eval") {
      std::optional<std::filesystem::path> p;
      if (poisoned) p = *poisoned;
      pcb::cmd_eval(cfg, model, test, p, out);
    } else if (verb == "search") {
      pcb::cmd_search(cfg, data, out);
    } else if (verb == "defend") {
      req.train_path = data;
      req.test_path = test;
      if (defend_model) req.model_path = *defend_model;
      pcb::cmd_defend(cfg, req, out);
    } else if (verb == "report") {
      pcb::cmd_report(std::vector<std::filesystem::path>(runs.begin(), runs.end()), out);
    }
    out.finish();
    std::cout << out.path().string() << '\n';
    return pcb::kExitOk;
  } catch (const pcb::InvalidArgument& e) {
    std::cerr << "pcb " << verb << ": " << e.what() << '\n';
    return pcb::kExitUsage;
  } catch (const pcb::FormatError& e) {
    std::cerr << "pcb " << verb << ": " << e.what() << '\n';
    return pcb::kExitData;
  } catch (const pcb::DegenerateFeature& e) {
    std::cerr << "pcb " << verb << ": " << e.what() << '\n';
    return pcb::kExitData;
  } catch (const pcb::NumericError& e) {
    std::cerr << "pcb " << verb << ": " << e.what() << '\n';
    return pcb::kExitNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "pcb " << verb << ": " << e.what() << '\n';
    return pcb::kExitData;
  } catch (const json::exception& e) {
    std::cerr << "pcb " << verb << ": config: " << e.what() << '\n';
    return pcb::kExitUsage;
  }
}
