#ifndef RPO_EXPERIMENT_H_
#define RPO_EXPERIMENT_H_

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rpo/algo.h"
#include "rpo/envs.h"

namespace rpo {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EvalConfig {
  int episodes = 128;
  // deterministic, stochastic or both
  std::string mode = "both";
  // explicit start states (one list per episode); empty draws from the
  // env's initial distribution
  std::vector<std::vector<double>> start_states;
};

struct LoggingConfig {
  std::string out_dir = "runs";
  // rows buffered before the CSV is flushed
  int flush_interval = 10;
  // real elapsed seconds in wall_time_s; off keeps logs bit-stable
  bool wall_time = false;
};

struct LabConfig {
  int samples = 100000;
  int batch_size = 1000;
  // behavior policy parameters (w_mu, w_sigma, b_mu, b_sigma)
  std::vector<double> theta = {0.2, 0.1, -0.1, -1.0};
  // candidate = behavior + perturbation * N(0, I)
  double perturbation = 0.01;
  std::uint64_t perturbation_seed = 1;
};

struct ExperimentConfig {
  EnvConfig env;
  TrainerConfig trainer;
  EvalConfig eval;
  LoggingConfig logging;
  LabConfig lab;
  std::vector<std::uint64_t> seeds = {0};
};

// Missing fields take their defaults (trainer defaults depend on
// trainer.algorithm); unknown keys and ill-typed values throw ConfigError.
ExperimentConfig ParseConfig(const nlohmann::json& doc);
nlohmann::json ToJson(const ExperimentConfig& config);
nlohmann::json LoadJsonFile(const std::filesystem::path& path);

// "trainer.policy_epochs=2": the value is parsed as JSON when possible and
// kept as a string otherwise
void ApplyOverride(nlohmann::json& doc, const std::string& assignment);

// the four sample-reuse ablation variants as (name, overrides)
std::vector<std::pair<std::string, std::vector<std::string>>> AblationVariants();

// ----- metric log ----- //

class MetricLog {
 public:
  static const std::vector<std::string>& Columns();

  MetricLog(const std::filesystem::path& path, int flush_interval, bool wall_time);
  ~MetricLog();
  MetricLog(const MetricLog&) = delete;
  MetricLog& operator=(const MetricLog&) = delete;

  void Append(const UpdateMetrics& m, double wall_seconds);
  void Flush();

  static std::string FormatRow(const UpdateMetrics& m, double wall_seconds);

 private:
  std::ofstream file_;
  int flush_interval_;
  bool wall_time_;
  int pending_ = 0;
};

// ----- parameter files ----- //

// params.bin (little-endian f64: actor, critic 1, critic 2) and params.json
void SaveParameters(const SquashedNormalPolicy& policy, const DoubleCritic& critics,
                    const std::filesystem::path& dir);
// fills networks of matching architecture; throws on any mismatch
void LoadParameters(const std::filesystem::path& dir, SquashedNormalPolicy& policy,
                    DoubleCritic* critics);

// ----- runs ----- //

// policy with the architecture the trainer config describes
SquashedNormalPolicy MakePolicy(const DiffEnv& env, const TrainerConfig& trainer);

// deterministic and/or stochastic returns per the eval config
nlohmann::json EvaluatePolicy(const SquashedNormalPolicy& policy, const DiffEnv& env,
                              const EvalConfig& eval, double gamma, Rng rng);

struct RunOutcome {
  nlohmann::json summary;
  int failures = 0;
};

// trains one seed into dir: metrics.csv, params.bin/json, summary.json
RunOutcome TrainRun(const ExperimentConfig& config, std::uint64_t seed,
                    const std::filesystem::path& dir, std::ostream& log);

}  // namespace rpo

#endif  // RPO_EXPERIMENT_H_
