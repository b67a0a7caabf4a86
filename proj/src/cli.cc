#include "rpo/cli.h"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "rpo/checks.h"
#include "rpo/experiment.h"
#include "rpo/oracle.h"

namespace rpo {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string trainer;
  std::string env;
  std::vector<std::string> overrides;
};

void AddCommon(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file");
  cmd->add_option("--seed", f.seed, "single seed (replaces the config's seed list)");
  cmd->add_option("--out", f.out, "output directory (replaces logging.out_dir)");
  cmd->add_option("--trainer", f.trainer, "rpo, shac, sapo or ppo")
      ->check(CLI::IsMember({"rpo", "shac", "sapo", "ppo"}));
  cmd->add_option("--env", f.env, "double_integrator, pendulum, bandit or chain")
      ->check(CLI::IsMember({"double_integrator", "pendulum", "bandit", "chain"}));
  cmd->add_option("--set", f.overrides, "dotted override, e.g. trainer.policy_epochs=2");
}

// raw document after flags, before parsing (so trainer defaults follow the
// final algorithm choice)
json BuildDocument(const CommonFlags& f) {
  json doc = f.config.empty() ? json::object() : LoadJsonFile(f.config);
  if (!f.trainer.empty()) ApplyOverride(doc, "trainer.algorithm=\"" + f.trainer + "\"");
  if (!f.env.empty()) ApplyOverride(doc, "env.name=\"" + f.env + "\"");
  if (!f.out.empty()) doc["logging"]["out_dir"] = f.out;
  if (f.seed) doc["seeds"] = json::array({*f.seed});
  for (const auto& o : f.overrides) ApplyOverride(doc, o);
  return doc;
}

void WriteJson(const fs::path& path, const json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream file(path);
  if (!file) throw std::runtime_error("cannot write " + path.string());
  file << j.dump(2) << "\n";
}

// trains every seed into dir/seed_<s>; returns the number of failed iterations
int TrainSeeds(const ExperimentConfig& config, const fs::path& dir, std::ostream& out,
               std::ostream& err) {
  WriteJson(dir / "config.json", ToJson(config));
  int failures = 0;
  for (std::uint64_t seed : config.seeds) {
    const fs::path run = dir / ("seed_" + std::to_string(seed));
    const RunOutcome outcome = TrainRun(config, seed, run, err);
    failures += outcome.failures;
    out << run.string() << ": final_mean_return=" << outcome.summary["final_mean_return"]
        << " eval=" << outcome.summary["eval"].dump() << "\n";
  }
  return failures;
}

int Train(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  const ExperimentConfig config = ParseConfig(BuildDocument(f));
  const int failures = TrainSeeds(config, config.logging.out_dir, out, err);
  if (failures > 0) {
    err << "training produced non-finite values in " << failures << " iteration(s)\n";
    return kExitNonFinite;
  }
  return kExitOk;
}

int Ablate(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  const json base = BuildDocument(f);
  const fs::path root = ParseConfig(base).logging.out_dir;
  int failures = 0;
  for (const auto& [name, overrides] : AblationVariants()) {
    json doc = base;
    for (const auto& o : overrides) ApplyOverride(doc, o);
    const ExperimentConfig config = ParseConfig(doc);
    out << "variant " << name << "\n";
    failures += TrainSeeds(config, root / name, out, err);
  }
  if (failures > 0) {
    err << "training produced non-finite values in " << failures << " iteration(s)\n";
    return kExitNonFinite;
  }
  return kExitOk;
}

int Eval(const CommonFlags& f, const std::string& params, const std::string& mode,
         std::optional<int> episodes, std::ostream& out) {
  CommonFlags flags = f;
  // without --config, reuse the config echoed next to the run directory
  if (flags.config.empty()) {
    const fs::path echoed = fs::path(params).parent_path() / "config.json";
    if (fs::exists(echoed)) flags.config = echoed.string();
  }
  json doc = BuildDocument(flags);
  if (!mode.empty()) doc["eval"]["mode"] = mode;
  if (episodes) doc["eval"]["episodes"] = *episodes;
  const ExperimentConfig config = ParseConfig(doc);
  if (!fs::exists(fs::path(params) / "params.json")) {
    throw std::runtime_error("no params.json in " + params);
  }
  const auto env = MakeEnv(config.env);
  SquashedNormalPolicy policy = MakePolicy(*env, config.trainer);
  LoadParameters(params, policy, nullptr);
  const std::uint64_t seed = config.seeds.front();
  const json result =
      EvaluatePolicy(policy, *env, config.eval, config.trainer.gamma, SeedEverything(seed).eval);
  out << json({{"params", params}, {"seed", seed}, {"eval", result}}).dump(2) << "\n";
  return kExitOk;
}

int GradCheck(const GradientCheckOptions& options, std::ostream& out) {
  bool ok = true;
  for (const CheckResult& r : RunGradientChecks(options)) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-4s %-40s err=%.3e tol=%.1e", r.passed ? "ok" : "FAIL",
                  r.name.c_str(), r.error, r.tolerance);
    out << line << (r.detail.empty() ? "" : "  " + r.detail) << "\n";
    ok = ok && r.passed;
  }
  return ok ? kExitOk : kExitRuntime;
}

int Lab(const CommonFlags& f, std::ostream& out) {
  json doc = BuildDocument(f);
  if (f.env.empty() && !(doc.contains("env") && doc["env"].contains("name"))) {
    doc["env"]["name"] = "bandit";
  }
  const ExperimentConfig config = ParseConfig(doc);
  const auto env = MakeEnv(config.env);
  if (config.env.name != "bandit" && config.env.name != "chain") {
    throw ConfigError("estimator-lab needs env bandit or chain");
  }
  const Vector theta = Eigen::Map<const Vector>(config.lab.theta.data(),
                                                static_cast<Eigen::Index>(config.lab.theta.size()));
  if (theta.size() != 4) throw ConfigError("lab.theta must have 4 entries");
  Rng perturb(config.lab.perturbation_seed, 0);
  const Vector candidate = theta + config.lab.perturbation * perturb.Normal(4, 1);
  const SquashedNormalPolicy old_policy = MakeLinearPolicy(*env, theta);
  const SquashedNormalPolicy new_policy = MakeLinearPolicy(*env, candidate);
  LabOptions options;
  options.samples = config.lab.samples;
  options.batch_size = config.lab.batch_size;
  options.gamma = config.trainer.gamma;
  options.seed = config.seeds.front();
  const json report = EstimatorLab(*env, old_policy, new_policy, options).ToJson();
  WriteJson(fs::path(config.logging.out_dir) / "lab.json", report);
  out << report.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"reparameterization proximal policy optimization runner"};
  app.require_subcommand(1);

  CommonFlags train_flags, ablate_flags, eval_flags, lab_flags;
  CLI::App* train = app.add_subcommand("train", "train every configured seed");
  AddCommon(train, train_flags);
  CLI::App* ablate = app.add_subcommand("ablate", "train the four sample-reuse variants");
  AddCommon(ablate, ablate_flags);

  CLI::App* eval = app.add_subcommand("eval", "evaluate saved parameters");
  AddCommon(eval, eval_flags);
  std::string params, mode;
  std::optional<int> episodes;
  eval->add_option("--params", params, "run directory holding params.json/params.bin")
      ->required();
  eval->add_option("--mode", mode, "deterministic, stochastic or both")
      ->check(CLI::IsMember({"deterministic", "stochastic", "both"}));
  eval->add_option("--episodes", episodes, "evaluation episodes");

  CLI::App* grad = app.add_subcommand("grad-check", "autodiff vs finite differences");
  GradientCheckOptions grad_options;
  grad->add_option("--points", grad_options.points, "random points per check");
  grad->add_option("--seed", grad_options.seed, "seed for the random points");
  grad->add_option("--tolerance", grad_options.tolerance, "relative error tolerance");

  CLI::App* lab = app.add_subcommand("estimator-lab", "compare gradient estimators to quadrature");
  AddCommon(lab, lab_flags);

  // CLI11 parses argv-style vectors in reverse order
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return Train(train_flags, out, err);
    if (*ablate) return Ablate(ablate_flags, out, err);
    if (*eval) return Eval(eval_flags, params, mode, episodes, out);
    if (*grad) return GradCheck(grad_options, out);
    if (*lab) return Lab(lab_flags, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace rpo
