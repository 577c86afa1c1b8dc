// irlid: runs identifiability, generalization and robustness experiments
// from JSON configs and writes report.json plus CSV plot data.
//
// Exit codes: 0 success, 1 configuration error, 2 numerical failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irlid/experiment.hpp"

namespace fs = std::filesystem;
using irlid::experiment::ConfigError;
using irlid::experiment::json;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

struct CommonArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> rank_tol;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out_dir) {
  cmd->add_option("--config", args.config, "experiment config (JSON)")->required();
  cmd->add_option("--seed", args.seed, "run seed, replaces the config value");
  cmd->add_option("--rank-tol", args.rank_tol, "relative singular value cutoff for rank decisions");
  cmd->add_option("--override", args.overrides, "dotted-path config override KEY=VALUE (repeatable)");
  if (with_out_dir) cmd->add_option("--out", args.out, "output directory");
}

json load_document(const CommonArgs& args) {
  json doc = irlid::experiment::read_json_file(args.config);
  for (const auto& o : args.overrides) irlid::experiment::apply_override(doc, o);
  if (args.seed) doc["seed"] = *args.seed;
  if (args.rank_tol) doc["rank_tol"] = *args.rank_tol;
  return doc;
}

fs::path config_dir(const CommonArgs& args) { return fs::absolute(args.config).parent_path(); }

int run_experiment(const std::string& kind, const CommonArgs& args) {
  const auto start = std::chrono::steady_clock::now();
  json doc = load_document(args);
  if (!doc.is_object()) throw ConfigError("", "expected an object");
  if (!doc.contains("kind")) doc["kind"] = kind;
  if (doc["kind"] != kind) {
    throw ConfigError("/kind", "config is for '" + doc["kind"].dump() + "', not '" + kind + "'");
  }
  const auto config = irlid::experiment::parse_config(doc, config_dir(args));

  fs::path out = args.out;
  if (out.empty()) {
    out = doc.contains("output_dir") && doc["output_dir"].is_string() ? doc["output_dir"].get<std::string>()
                                                                     : "irlid-out/" + kind;
  }
  const auto result = irlid::experiment::run(config);
  irlid::experiment::emit_plot_data(result, out);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  irlid::experiment::write_atomic(out / "timing.json", json{{"wall_seconds", seconds}}.dump(2) + "\n");

  std::cout << kind << ": wrote " << (out / "report.json").string() << " and " << result.files.size()
            << " plot file(s) in " << seconds << " s\n";
  return 0;
}

int run_gen_env(const CommonArgs& args, std::optional<std::size_t> expert, bool target) {
  json doc = load_document(args);
  if (!doc.contains("kind")) doc["kind"] = "identify";
  const auto config = irlid::experiment::parse_config(doc, config_dir(args));
  irlid::BuiltEnv built = [&] {
    if (target) {
      if (!config.target) throw ConfigError("/target", "config has no target");
      return irlid::experiment::build_env(*config.target, "/target", config.seed, 0, config.experts.size() + 1,
                                          config.base_dir);
    }
    if (expert) {
      if (*expert >= config.experts.size()) throw ConfigError("/experts", "expert index out of range");
      const std::string path = "/experts/" + std::to_string(*expert);
      return irlid::experiment::build_env(config.experts[*expert], path, config.seed, 0, *expert + 1,
                                          config.base_dir);
    }
    return irlid::experiment::build_env(config.environment, "/environment", config.seed, 0, 0, config.base_dir);
  }();
  json out = irlid::to_json(built);
  out["schema_version"] = irlid::experiment::kSchemaVersion;
  const std::string text = out.dump() + "\n";
  if (args.out.empty()) {
    std::cout << text;
  } else {
    irlid::experiment::write_atomic(args.out, text);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward identifiability and generalization experiments for entropy-regularized MDPs"};
  app.require_subcommand(1);

  std::vector<std::pair<std::string, CommonArgs>> kinds;
  for (const auto& k : irlid::experiment::experiment_kinds()) kinds.emplace_back(k, CommonArgs{});
  std::vector<CLI::App*> commands;
  for (auto& [name, args] : kinds) {
    auto* cmd = app.add_subcommand(name, "run a '" + name + "' experiment");
    add_common(cmd, args, true);
    commands.push_back(cmd);
  }

  CommonArgs gen_args;
  std::optional<std::size_t> gen_expert;
  bool gen_target = false;
  auto* gen = app.add_subcommand("gen-env", "dump a built environment as JSON");
  add_common(gen, gen_args, false);
  gen->add_option("--out", gen_args.out, "output file (default: stdout)");
  gen->add_option("--expert", gen_expert, "build expert INDEX instead of the base environment");
  gen->add_flag("--target", gen_target, "build the target environment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (gen->parsed()) return run_gen_env(gen_args, gen_expert, gen_target);
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (commands[i]->parsed()) return run_experiment(kinds[i].first, kinds[i].second);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const irlid::ValidationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const irlid::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  }
  return 0;
}
