// SPDX-License-Identifier: Apache-2.0

#include "role_forge/run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace role_forge {

namespace {

using Json = nlohmann::ordered_json;

Json train_to_json(const TrainConfig& c) {
  Json j;
  j["env_kind"] = envs::env_kind_name(c.env_kind);
  j["ablation"] = ablation_name(c.ablation);
  j["gamma"] = c.gamma;
  j["lr"] = c.lr;
  j["rms_alpha"] = c.rms_alpha;
  j["rms_eps"] = c.rms_eps;
  j["lambda_i"] = c.lambda_i;
  j["lambda_d"] = c.lambda_d;
  j["eps_start"] = c.eps_start;
  j["eps_end"] = c.eps_end;
  j["eps_anneal_steps"] = c.eps_anneal_steps;
  j["n_parallel"] = c.n_parallel;
  j["batch_episodes"] = c.batch_episodes;
  j["buffer_capacity"] = c.buffer_capacity;
  j["target_interval"] = c.target_interval;
  j["updates_per_round"] = c.updates_per_round;
  j["role_dim"] = c.role_dim;
  j["total_env_steps"] = c.total_env_steps;
  j["eval_interval"] = c.eval_interval;
  j["eval_episodes"] = c.eval_episodes;
  j["input_last_action"] = c.input_last_action;
  j["input_agent_id"] = c.input_agent_id;
  j["single_thread"] = c.single_thread;
  j["seed"] = c.seed;
  return j;
}

template <typename T>
void read(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  Json j;
  try {
    j = Json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  RunConfig rc;
  std::set<std::string> known{"run_name", "output_dir"};
  const Json defaults = train_to_json(rc.train);
  for (const auto& [key, _] : defaults.items()) known.insert(key);
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");

  TrainConfig& c = rc.train;
  if (j.contains("env_kind")) {
    std::string name;
    read(j, "env_kind", name);
    try {
      c.env_kind = envs::parse_env_kind(name);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("ablation")) {
    std::string name;
    read(j, "ablation", name);
    try {
      c.ablation = parse_ablation(name);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  read(j, "gamma", c.gamma);
  read(j, "lr", c.lr);
  read(j, "rms_alpha", c.rms_alpha);
  read(j, "rms_eps", c.rms_eps);
  read(j, "lambda_i", c.lambda_i);
  read(j, "lambda_d", c.lambda_d);
  read(j, "eps_start", c.eps_start);
  read(j, "eps_end", c.eps_end);
  read(j, "eps_anneal_steps", c.eps_anneal_steps);
  read(j, "n_parallel", c.n_parallel);
  read(j, "batch_episodes", c.batch_episodes);
  read(j, "buffer_capacity", c.buffer_capacity);
  read(j, "target_interval", c.target_interval);
  read(j, "updates_per_round", c.updates_per_round);
  read(j, "role_dim", c.role_dim);
  read(j, "total_env_steps", c.total_env_steps);
  read(j, "eval_interval", c.eval_interval);
  read(j, "eval_episodes", c.eval_episodes);
  read(j, "input_last_action", c.input_last_action);
  read(j, "input_agent_id", c.input_agent_id);
  read(j, "single_thread", c.single_thread);
  read(j, "seed", c.seed);
  read(j, "run_name", rc.run_name);
  read(j, "output_dir", rc.output_dir);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& config) {
  Json j;
  j["run_name"] = config.run_name;
  j["output_dir"] = config.output_dir;
  const Json train = train_to_json(config.train);
  for (const auto& [key, value] : train.items()) j[key] = value;
  return j.dump(2) + "\n";
}

std::uint64_t config_hash(const TrainConfig& config) {
  const std::string text = train_to_json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::filesystem::path resolve_output_dir(const RunConfig& config) {
  if (const char* env = std::getenv("ROLE_FORGE_OUTPUT_DIR"); env && *env) return env;
  return config.output_dir;
}

}  // namespace role_forge
