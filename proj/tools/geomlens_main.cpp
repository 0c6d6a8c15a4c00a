// Command-line front end: generate | analyze | sweep | train-compare |
// certify-activation. Exit codes: 0 success, 2 invalid config, 3 acceptance
// gate failed, 4 numerical error.

#include <cxxabi.h>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "geomlens/experiment.hpp"
#include "geomlens/json_io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitGate = 3;
constexpr int kExitNumerical = 4;

struct CommonFlags {
  std::string config_path;
  std::optional<double> eps;
  std::optional<std::uint64_t> seed;
  std::optional<geomlens::Index> rank;
  std::optional<std::string> out_dir;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool config_required = true) {
  auto* opt = cmd->add_option("-c,--config", flags.config_path,
                              "experiment config JSON file");
  if (config_required) opt->required();
  cmd->add_option("--eps", flags.eps, "override the scalar eps");
  cmd->add_option("--seed", flags.seed, "override the seed");
  cmd->add_option("--rank", flags.rank, "override the first analysis rank");
  cmd->add_option("--out", flags.out_dir, "override the output directory");
}

// precedence: flags > GEOMLENS_SEED > config file
geomlens::ExperimentConfig resolve_config(const CommonFlags& flags) {
  geomlens::ExperimentConfig cfg = geomlens::load_config(flags.config_path);
  if (const char* env_seed = std::getenv("GEOMLENS_SEED")) {
    try {
      cfg.seed = std::stoull(env_seed);
    } catch (const std::exception&) {
      throw geomlens::ConfigError("GEOMLENS_SEED is not an integer");
    }
  }
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.eps) cfg.eps = *flags.eps;
  if (flags.rank) {
    if (cfg.ranks.empty()) {
      cfg.ranks.push_back(*flags.rank);
    } else {
      cfg.ranks[0] = *flags.rank;
    }
  }
  if (flags.out_dir) cfg.output_dir = *flags.out_dir;
  return cfg;
}

std::string out_path(const geomlens::ExperimentConfig& cfg,
                     const std::string& name) {
  std::filesystem::create_directories(cfg.output_dir);
  return (std::filesystem::path(cfg.output_dir) / name).string();
}

// short class name of an error, e.g. "EpsilonTooLarge"
std::string error_name(const std::exception& e) {
  int status = 0;
  std::unique_ptr<char, void (*)(void*)> demangled(
      abi::__cxa_demangle(typeid(e).name(), nullptr, nullptr, &status),
      std::free);
  std::string name = status == 0 && demangled ? demangled.get() : typeid(e).name();
  const std::size_t pos = name.rfind("::");
  return pos == std::string::npos ? name : name.substr(pos + 2);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"local-geometry analysis of feedforward feature extraction"};
  app.require_subcommand(1);

  CommonFlags gen_flags, analyze_flags, sweep_flags, train_flags;
  std::string dist_path;
  std::string certify_activation;
  double certify_center = 0.0;
  std::optional<double> certify_delta;
  int certify_probes = 256;

  CLI::App* cmd_generate =
      app.add_subcommand("generate", "write the eps-dependent joint to JSON");
  add_common(cmd_generate, gen_flags);

  CLI::App* cmd_analyze = app.add_subcommand(
      "analyze", "closed-form layer analyses for a stored distribution");
  add_common(cmd_analyze, analyze_flags);
  cmd_analyze->add_option("--dist", dist_path,
                          "distribution JSON (defaults to a fresh generate)");

  CLI::App* cmd_sweep = app.add_subcommand(
      "sweep", "eps sweep with scaling gates; writes JSON and CSV reports");
  add_common(cmd_sweep, sweep_flags);

  CLI::App* cmd_train = app.add_subcommand(
      "train-compare", "train a reference net and compare to the theory");
  add_common(cmd_train, train_flags);

  CLI::App* cmd_certify = app.add_subcommand(
      "certify-activation", "probe the non-vanishing-gradient condition");
  cmd_certify->add_option("--activation", certify_activation, "activation name")
      ->required();
  cmd_certify->add_option("--center", certify_center, "expansion center")
      ->required();
  cmd_certify->add_option("--delta", certify_delta,
                          "interval half width (default: auto search)");
  cmd_certify->add_option("--probes", certify_probes, "probe count");

  CLI11_PARSE(app, argc, argv);

  try {
    if (cmd_generate->parsed()) {
      const auto cfg = resolve_config(gen_flags);
      const auto result = geomlens::run_generate(cfg);
      const std::string path = out_path(cfg, "dist.json");
      geomlens::write_text_file(path, result.json_text);
      std::cout << path << "\n";
      return kExitOk;
    }
    if (cmd_analyze->parsed()) {
      const auto cfg = resolve_config(analyze_flags);
      const geomlens::JointDistribution joint =
          dist_path.empty()
              ? geomlens::run_generate(cfg).joint
              : geomlens::dist_from_json(geomlens::read_text_file(dist_path));
      const auto result = geomlens::run_analyze(cfg, joint);
      const std::string path = out_path(cfg, "analysis.json");
      geomlens::write_text_file(path, result.json_text);
      std::cout << path << "\n";
      return kExitOk;
    }
    if (cmd_sweep->parsed()) {
      const auto cfg = resolve_config(sweep_flags);
      const auto report = geomlens::run_sweep(cfg);
      geomlens::write_text_file(out_path(cfg, "sweep.json"),
                                geomlens::sweep_to_json(cfg, report));
      geomlens::write_text_file(out_path(cfg, "sweep.csv"),
                                geomlens::sweep_to_csv(report));
      std::cout << out_path(cfg, "sweep.json") << "\n";
      if (!report.gates_passed) {
        for (const std::string& failure : report.gate_failures) {
          std::cerr << "gate failed: " << failure << "\n";
        }
        return kExitGate;
      }
      return kExitOk;
    }
    if (cmd_train->parsed()) {
      const auto cfg = resolve_config(train_flags);
      const auto result = geomlens::run_train_compare(cfg);
      const std::string path = out_path(cfg, "train_compare.json");
      geomlens::write_text_file(path, result.json_text);
      geomlens::write_text_file(out_path(cfg, "trained_net.json"),
                                result.net_json_text);
      std::cout << path << "\n";
      if (result.gated && !result.gate_passed) {
        std::cerr << "gate failed: excess-risk ratio "
                  << geomlens::fmt17(result.ratio) << " outside band\n";
        return kExitGate;
      }
      return kExitOk;
    }
    if (cmd_certify->parsed()) {
      std::cout << geomlens::run_certify(certify_activation, certify_center,
                                         certify_delta, certify_probes)
                << "\n";
      return kExitOk;
    }
  } catch (const geomlens::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const geomlens::GateFailure& e) {
    std::cerr << "gate failed: " << e.what() << "\n";
    return kExitGate;
  } catch (const geomlens::Error& e) {
    std::cerr << error_name(e) << ": " << e.what() << "\n";
    return kExitNumerical;
  }
  return kExitOk;
}
