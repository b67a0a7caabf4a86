#include "rpo/experiment.h"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>
#include <sstream>

namespace rpo {

using nlohmann::json;

namespace {

// ----- field tables ----- //

template <class V>
void Fields(DoubleIntegratorParams& p, V&& v) {
  v("dt", p.dt);
  v("episode_length", p.episode_length);
  v("position_weight", p.position_weight);
  v("velocity_weight", p.velocity_weight);
  v("action_weight", p.action_weight);
  v("init_range", p.init_range);
}

template <class V>
void Fields(PendulumParams& p, V&& v) {
  v("gravity", p.gravity);
  v("mass", p.mass);
  v("length", p.length);
  v("dt", p.dt);
  v("max_speed", p.max_speed);
  v("max_torque", p.max_torque);
  v("episode_length", p.episode_length);
  v("velocity_weight", p.velocity_weight);
  v("action_weight", p.action_weight);
  v("hard_clamp", p.hard_clamp);
}

template <class V>
void Fields(BanditParams& p, V&& v) {
  v("target", p.target);
  v("state", p.state);
}

template <class V>
void Fields(ChainParams& p, V&& v) {
  v("initial_state", p.initial_state);
  v("state_coef", p.state_coef);
  v("action_coef", p.action_coef);
  v("action_weight", p.action_weight);
  v("action_bound", p.action_bound);
}

template <class V>
void Fields(EnvConfig& c, V&& v) {
  v("name", c.name);
  v("double_integrator", c.double_integrator);
  v("pendulum", c.pendulum);
  v("bandit", c.bandit);
  v("chain", c.chain);
}

template <class V>
void Fields(TrainerConfig& c, V&& v) {
  v("algorithm", c.algorithm);
  v("iterations", c.iterations);
  v("num_envs", c.num_envs);
  v("horizon", c.horizon);
  v("gamma", c.gamma);
  v("td_lambda", c.td_lambda);
  v("policy_epochs", c.policy_epochs);
  v("critic_epochs", c.critic_epochs);
  v("critic_minibatches", c.critic_minibatches);
  v("clip_low", c.clip_low);
  v("clip_high", c.clip_high);
  v("clip_gate", c.clip_gate);
  v("clip_coef", c.clip_coef);
  v("kl_coef", c.kl_coef);
  v("entropy_coef", c.entropy_coef);
  v("actor_lr", c.actor_lr);
  v("critic_lr", c.critic_lr);
  v("lr_schedule", c.lr_schedule);
  v("lr_final_ratio", c.lr_final_ratio);
  v("kl_target", c.kl_target);
  v("kl_lr_factor", c.kl_lr_factor);
  v("adam_beta1", c.adam_beta1);
  v("adam_beta2", c.adam_beta2);
  v("weight_decay", c.weight_decay);
  v("grad_clip", c.grad_clip);
  v("actor_hidden", c.actor_hidden);
  v("critic_hidden", c.critic_hidden);
  v("layer_norm", c.layer_norm);
  v("log_std_min", c.log_std_min);
  v("log_std_max", c.log_std_max);
  v("entropy_in_reward", c.entropy_in_reward);
  v("adapt_temperature", c.adapt_temperature);
  v("init_temperature", c.init_temperature);
  v("temperature_lr", c.temperature_lr);
  v("target_entropy", c.target_entropy);
  v("terminal_value", c.terminal_value);
  v("ppo_clip", c.ppo_clip);
  v("ppo_minibatches", c.ppo_minibatches);
}

template <class V>
void Fields(EvalConfig& c, V&& v) {
  v("episodes", c.episodes);
  v("mode", c.mode);
  v("start_states", c.start_states);
}

template <class V>
void Fields(LoggingConfig& c, V&& v) {
  v("out_dir", c.out_dir);
  v("flush_interval", c.flush_interval);
  v("wall_time", c.wall_time);
}

template <class V>
void Fields(LabConfig& c, V&& v) {
  v("samples", c.samples);
  v("batch_size", c.batch_size);
  v("theta", c.theta);
  v("perturbation", c.perturbation);
  v("perturbation_seed", c.perturbation_seed);
}

template <class T>
concept HasFields = requires(T& t) { Fields(t, [](const char*, auto&) {}); };

// ----- reading ----- //

[[noreturn]] void TypeError(const std::string& path, const char* expected, const json& j) {
  throw ConfigError("config: " + path + " must be " + expected + ", got " + j.dump());
}

void Read(const json& j, double& out, const std::string& path) {
  if (!j.is_number()) TypeError(path, "a number", j);
  out = j.get<double>();
}

void Read(const json& j, int& out, const std::string& path) {
  if (!j.is_number_integer()) TypeError(path, "an integer", j);
  out = j.get<int>();
}

void Read(const json& j, std::uint64_t& out, const std::string& path) {
  if (!j.is_number_integer() || (j.is_number_integer() && !j.is_number_unsigned() &&
                                 j.get<long long>() < 0)) {
    TypeError(path, "a non-negative integer", j);
  }
  out = j.get<std::uint64_t>();
}

void Read(const json& j, bool& out, const std::string& path) {
  if (!j.is_boolean()) TypeError(path, "true or false", j);
  out = j.get<bool>();
}

void Read(const json& j, std::string& out, const std::string& path) {
  if (!j.is_string()) TypeError(path, "a string", j);
  out = j.get<std::string>();
}

void Read(const json& j, std::optional<double>& out, const std::string& path) {
  if (j.is_null()) {
    out.reset();
    return;
  }
  double v = 0.0;
  Read(j, v, path);
  out = v;
}

void Read(const json& j, ScheduleKind& out, const std::string& path) {
  std::string name;
  Read(j, name, path);
  try {
    out = ParseSchedule(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
}

void Read(const json& j, Algorithm& out, const std::string& path) {
  std::string name;
  Read(j, name, path);
  try {
    out = ParseAlgorithm(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
}

template <class T>
void Read(const json& j, std::vector<T>& out, const std::string& path) {
  if (!j.is_array()) TypeError(path, "a list", j);
  out.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    T item{};
    Read(j[i], item, path + "[" + std::to_string(i) + "]");
    out.push_back(item);
  }
}

template <HasFields T>
void Read(const json& j, T& out, const std::string& path) {
  if (!j.is_object()) TypeError(path, "an object", j);
  std::set<std::string> known;
  Fields(out, [&](const char* name, auto& field) {
    known.insert(name);
    if (j.contains(name)) Read(j.at(name), field, path + "." + name);
  });
  for (const auto& item : j.items()) {
    if (!known.count(item.key())) {
      throw ConfigError("config: unknown key '" + path + "." + item.key() + "'");
    }
  }
}

// ----- writing ----- //

json Write(double v) { return v; }
json Write(int v) { return v; }
json Write(std::uint64_t v) { return v; }
json Write(bool v) { return v; }
json Write(const std::string& v) { return v; }
json Write(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json Write(ScheduleKind v) { return ScheduleName(v); }
json Write(Algorithm v) { return AlgorithmName(v); }

template <class T>
json Write(const std::vector<T>& v) {
  json out = json::array();
  for (const T& item : v) out.push_back(Write(item));
  return out;
}

template <HasFields T>
json Write(const T& value) {
  json out = json::object();
  Fields(const_cast<T&>(value), [&](const char* name, auto& field) { out[name] = Write(field); });
  return out;
}

void Validate(const ExperimentConfig& c) {
  const TrainerConfig& t = c.trainer;
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(t.iterations >= 1, "trainer.iterations must be >= 1");
  require(t.num_envs >= 1, "trainer.num_envs must be >= 1");
  require(t.horizon >= 1, "trainer.horizon must be >= 1");
  require(t.policy_epochs >= 1, "trainer.policy_epochs must be >= 1");
  require(t.critic_epochs >= 0, "trainer.critic_epochs must be >= 0");
  require(t.critic_minibatches >= 1, "trainer.critic_minibatches must be >= 1");
  require(t.ppo_minibatches >= 1, "trainer.ppo_minibatches must be >= 1");
  require(t.gamma > 0.0 && t.gamma <= 1.0, "trainer.gamma must be in (0, 1]");
  require(t.td_lambda >= 0.0 && t.td_lambda <= 1.0, "trainer.td_lambda must be in [0, 1]");
  require(t.clip_low >= 0.0 && t.clip_low <= 1.0, "trainer.clip_low must be in [0, 1]");
  require(t.clip_high >= 0.0, "trainer.clip_high must be >= 0");
  require(t.actor_lr > 0.0 && t.critic_lr > 0.0, "learning rates must be positive");
  require(t.init_temperature > 0.0, "trainer.init_temperature must be positive");
  require(t.log_std_min <= t.log_std_max, "trainer.log_std_min must not exceed log_std_max");
  require(c.eval.episodes >= 1, "eval.episodes must be >= 1");
  require(c.eval.mode == "both" || c.eval.mode == "deterministic" ||
              c.eval.mode == "stochastic",
          "eval.mode must be deterministic, stochastic or both");
  require(c.logging.flush_interval >= 1, "logging.flush_interval must be >= 1");
  require(!c.seeds.empty(), "seeds must list at least one seed");
  require(c.lab.batch_size >= 1 && c.lab.samples >= 2 * c.lab.batch_size,
          "lab.samples must cover at least two batches");
  std::unique_ptr<DiffEnv> env;
  try {
    env = MakeEnv(c.env);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: env.name: ") + e.what());
  }
  for (const auto& s : c.eval.start_states) {
    require(static_cast<int>(s.size()) == env->state_dim(),
            "eval.start_states entries must have state_dim values");
  }
}

std::string Number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig ParseConfig(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  static const std::set<std::string> sections = {"env", "trainer", "eval", "logging", "lab",
                                                 "seeds"};
  for (const auto& item : doc.items()) {
    if (!sections.count(item.key())) {
      throw ConfigError("config: unknown key '" + item.key() + "'");
    }
  }
  ExperimentConfig c;
  if (doc.contains("env")) Read(doc["env"], c.env, "env");
  Algorithm algorithm = Algorithm::kRpo;
  if (doc.contains("trainer")) {
    const json& t = doc["trainer"];
    if (!t.is_object()) TypeError("trainer", "an object", t);
    if (t.contains("algorithm")) Read(t["algorithm"], algorithm, "trainer.algorithm");
    c.trainer = DefaultTrainerConfig(algorithm);
    Read(t, c.trainer, "trainer");
  }
  if (doc.contains("eval")) Read(doc["eval"], c.eval, "eval");
  if (doc.contains("logging")) Read(doc["logging"], c.logging, "logging");
  if (doc.contains("lab")) Read(doc["lab"], c.lab, "lab");
  if (doc.contains("seeds")) Read(doc["seeds"], c.seeds, "seeds");
  Validate(c);
  return c;
}

json ToJson(const ExperimentConfig& c) {
  return {{"env", Write(c.env)},         {"trainer", Write(c.trainer)},
          {"eval", Write(c.eval)},       {"logging", Write(c.logging)},
          {"lab", Write(c.lab)},         {"seeds", Write(c.seeds)}};
}

json LoadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
}

void ApplyOverride(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like section.key=value");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::stringstream parts(path);
  std::string part;
  std::vector<std::string> keys;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key");
    keys.push_back(part);
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->is_object()) throw ConfigError("override '" + assignment + "' crosses a value");
    node = &(*node)[keys[i]];
    if (node->is_null()) *node = json::object();
  }
  if (!node->is_object()) throw ConfigError("override '" + assignment + "' crosses a value");
  (*node)[keys.back()] = value;
}

std::vector<std::pair<std::string, std::vector<std::string>>> AblationVariants() {
  return {{"full", {}},
          {"no-kl", {"trainer.kl_coef=0"}},
          {"epochs-2", {"trainer.policy_epochs=2"}},
          {"no-clip", {"trainer.clip_gate=false"}}};
}

// ----- metric log ----- //

const std::vector<std::string>& MetricLog::Columns() {
  static const std::vector<std::string> columns = {
      "iteration", "env_steps", "mean_return", "kl_mean",     "kl_raw_max", "ratio_mean",
      "clip_fraction", "entropy", "actor_lr", "critic_loss", "wall_time_s"};
  return columns;
}

MetricLog::MetricLog(const std::filesystem::path& path, int flush_interval, bool wall_time)
    : file_(path), flush_interval_(std::max(1, flush_interval)), wall_time_(wall_time) {
  if (!file_) throw std::runtime_error("metric log: cannot write " + path.string());
  const auto& cols = Columns();
  for (std::size_t i = 0; i < cols.size(); ++i) file_ << (i ? "," : "") << cols[i];
  file_ << "\n";
}

MetricLog::~MetricLog() { file_.flush(); }

std::string MetricLog::FormatRow(const UpdateMetrics& m, double wall_seconds) {
  std::string row = std::to_string(m.iteration) + "," + std::to_string(m.env_steps);
  for (double v : {m.mean_return, m.kl_mean, m.kl_raw_max, m.ratio_mean, m.clip_fraction,
                   m.entropy, m.actor_lr, m.critic_loss, wall_seconds}) {
    row += "," + Number(v);
  }
  return row;
}

void MetricLog::Append(const UpdateMetrics& m, double wall_seconds) {
  file_ << FormatRow(m, wall_time_ ? wall_seconds : 0.0) << "\n";
  if (++pending_ >= flush_interval_) Flush();
}

void MetricLog::Flush() {
  file_.flush();
  pending_ = 0;
}

// ----- parameter files ----- //

namespace {

static_assert(std::endian::native == std::endian::little,
              "parameter files are written in host order and must be little-endian");

struct Section {
  std::string prefix;
  const Mlp* net;
};

}  // namespace

void SaveParameters(const SquashedNormalPolicy& policy, const DoubleCritic& critics,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::vector<Section> sections = {
      {"actor", &policy.net()}, {"critic1", &critics.net(0)}, {"critic2", &critics.net(1)}};
  json tensors = json::array();
  std::ofstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + (dir / "params.bin").string());
  long offset = 0;
  for (const Section& s : sections) {
    const Vector flat = s.net->Flatten();
    bin.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
    for (const ParamInfo& p : s.net->Manifest(s.prefix)) {
      tensors.push_back({{"name", p.name}, {"shape", {p.rows, p.cols}}, {"offset", offset}});
      offset += static_cast<long>(p.rows) * p.cols;
    }
  }
  const json manifest = {{"dtype", "f64"},
                         {"endianness", "little"},
                         {"order", "column_major"},
                         {"count", offset},
                         {"tensors", tensors}};
  std::ofstream(dir / "params.json") << manifest.dump(2) << "\n";
}

void LoadParameters(const std::filesystem::path& dir, SquashedNormalPolicy& policy,
                    DoubleCritic* critics) {
  const json manifest = LoadJsonFile(dir / "params.json");
  std::vector<Mlp*> nets = {&policy.net()};
  std::vector<std::string> prefixes = {"actor"};
  long expected = policy.NumParameters();
  if (critics) {
    nets.push_back(&critics->net(0));
    nets.push_back(&critics->net(1));
    prefixes.push_back("critic1");
    prefixes.push_back("critic2");
    expected += critics->net(0).NumParameters() + critics->net(1).NumParameters();
  }
  // the manifest must describe exactly these tensors, in order
  std::size_t t = 0;
  const json& tensors = manifest.at("tensors");
  for (std::size_t k = 0; k < nets.size(); ++k) {
    for (const ParamInfo& p : nets[k]->Manifest(prefixes[k])) {
      if (t >= tensors.size() || tensors[t].at("name") != p.name ||
          tensors[t].at("shape") != json({p.rows, p.cols})) {
        throw std::runtime_error("parameters in " + dir.string() +
                                 " do not match the configured networks at " + p.name);
      }
      ++t;
    }
  }
  std::ifstream bin(dir / "params.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open " + (dir / "params.bin").string());
  const long total = manifest.at("count").get<long>();
  if (total < expected) throw std::runtime_error("parameter file is too short");
  std::vector<double> data(total);
  bin.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (bin.gcount() != static_cast<std::streamsize>(data.size() * sizeof(double))) {
    throw std::runtime_error("parameter file is truncated");
  }
  long at = 0;
  for (Mlp* net : nets) {
    const int n = net->NumParameters();
    net->Assign(Eigen::Map<const Vector>(data.data() + at, n));
    at += n;
  }
}

// ----- runs ----- //

SquashedNormalPolicy MakePolicy(const DiffEnv& env, const TrainerConfig& trainer) {
  PolicyOptions options;
  options.mlp.hidden = trainer.actor_hidden;
  options.mlp.layer_norm = trainer.layer_norm;
  options.log_std_min = trainer.log_std_min;
  options.log_std_max = trainer.log_std_max;
  return SquashedNormalPolicy(env.state_dim(), env.bounds(), options);
}

json EvaluatePolicy(const SquashedNormalPolicy& policy, const DiffEnv& env,
                    const EvalConfig& eval, double gamma, Rng rng) {
  json out = json::object();
  for (EvalMode mode : {EvalMode::kDeterministic, EvalMode::kStochastic}) {
    const std::string name = EvalModeName(mode);
    if (eval.mode != "both" && eval.mode != name) continue;
    Rng local = rng.Split(mode == EvalMode::kDeterministic ? 0 : 1);
    EvalResult r;
    if (eval.start_states.empty()) {
      r = Evaluate(policy, env, eval.episodes, mode, local, gamma);
    } else {
      Matrix starts(env.state_dim(), static_cast<Eigen::Index>(eval.start_states.size()));
      for (std::size_t k = 0; k < eval.start_states.size(); ++k) {
        for (int d = 0; d < env.state_dim(); ++d) starts(d, k) = eval.start_states[k][d];
      }
      r = EvaluateFrom(policy, env, starts, mode, local, gamma);
    }
    out[name] = {{"episodes", r.episodes},
                 {"mean_return", r.mean_return},
                 {"std_return", r.std_return},
                 {"mean_discounted_return", r.mean_discounted},
                 {"std_discounted_return", r.std_discounted}};
  }
  return out;
}

RunOutcome TrainRun(const ExperimentConfig& config, std::uint64_t seed,
                    const std::filesystem::path& dir, std::ostream& log) {
  std::filesystem::create_directories(dir);
  const std::unique_ptr<DiffEnv> env = MakeEnv(config.env);
  Trainer trainer(*env, config.trainer, seed);
  RunOutcome outcome;
  const auto start = std::chrono::steady_clock::now();
  UpdateMetrics last;
  {
    MetricLog metrics(dir / "metrics.csv", config.logging.flush_interval,
                      config.logging.wall_time);
    for (int k = 0; k < config.trainer.iterations; ++k) {
      last = trainer.Iterate();
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      metrics.Append(last, wall);
      if (last.failed) {
        ++outcome.failures;
        log << "seed " << seed << " iteration " << last.iteration << ": " << last.failure
            << "; parameters kept at their last valid values\n";
      }
    }
  }
  SaveParameters(trainer.policy(), trainer.critics(), dir);
  const json eval = EvaluatePolicy(trainer.policy(), *env, config.eval, config.trainer.gamma,
                                   trainer.rngs().eval);
  outcome.summary = {{"seed", seed},
                     {"trainer", AlgorithmName(config.trainer.algorithm)},
                     {"env", config.env.name},
                     {"iterations", config.trainer.iterations},
                     {"env_steps", trainer.env_steps()},
                     {"failed_iterations", outcome.failures},
                     {"final_mean_return", std::isfinite(last.mean_return)
                                               ? json(last.mean_return)
                                               : json(nullptr)},
                     {"final_temperature", trainer.temperature()},
                     {"eval", eval}};
  std::ofstream(dir / "summary.json") << outcome.summary.dump(2) << "\n";
  return outcome;
}

}  // namespace rpo
