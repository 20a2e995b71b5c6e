#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dail/agent.hpp"
#include "dail/analysis.hpp"
#include "dail/errors.hpp"
#include "dail/gridworld.hpp"

namespace dail {

using Json = nlohmann::ordered_json;

struct DataSettings {
  int num_instructions = 16;
  std::uint64_t mapping_seed = 0;
  std::uint64_t seed = 0;  // collection seed
  std::size_t n_traj = 1024;
  double success_ratio = 0.5;
};

struct AnalysisSettings {
  AnalysisThresholds thresholds;
  int n_episodes = kDefaultEvalEpisodes;
  int n_states = 200;
  std::uint64_t seed = 0;
};

struct SweepGrid {
  std::vector<int> counts{1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
  std::vector<std::string> algorithms{"baseline", "dail"};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  long grad_steps = 2000;
};

struct RunConfig {
  EnvConfig env = default_env_config();
  DataSettings data;
  Hyperparams train;
  AnalysisSettings analysis;
  SweepGrid sweep;
  std::string out_dir = "runs/default";
};

inline void validate(const RunConfig& c);

namespace detail {

template <class F>
void for_each_key(const Json& j, const std::string& section, F&& f) {
  if (!j.is_object()) throw SchemaError(section + " must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!f(key, value)) throw SchemaError("unknown config key '" + section + "." + key + "'");
}

inline double get_real(const Json& v, const std::string& what) {
  if (!v.is_number()) throw SchemaError(what + " must be a number");
  return v.get<double>();
}

inline long long get_int(const Json& v, const std::string& what) {
  if (!v.is_number_integer()) throw SchemaError(what + " must be an integer");
  return v.get<long long>();
}

inline std::size_t get_size(const Json& v, const std::string& what) {
  const long long x = get_int(v, what);
  if (x < 0) throw SchemaError(what + " must be >= 0");
  return static_cast<std::size_t>(x);
}

inline std::uint64_t get_seed(const Json& v, const std::string& what) {
  if (!v.is_number_unsigned()) throw SchemaError(what + " must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool get_bool(const Json& v, const std::string& what) {
  if (!v.is_boolean()) throw SchemaError(what + " must be a boolean");
  return v.get<bool>();
}

}  // namespace detail

// --- Hyperparams -------------------------------------------------------------

inline Json to_json(const Hyperparams& h) {
  Json j;
  j["lr"] = h.lr;
  j["batch"] = h.batch;
  j["lambda"] = h.lambda;
  j["alpha"] = h.alpha;
  j["gamma"] = h.gamma;
  j["atoms"] = h.atoms;
  j["v_min"] = h.v_min;
  j["v_max"] = h.v_max;
  j["k_update"] = h.k_update;
  j["epochs"] = h.epochs;
  j["seed"] = h.seed;
  j["distributional"] = h.distributional;
  j["alignment"] = h.alignment;
  j["target_selects_next_action"] = h.target_selects_next_action;
  j["feature"] = h.feature;
  j["hidden"] = h.hidden;
  j["head_init_scale"] = h.head_init_scale;
  j["eval_episodes"] = h.eval_episodes;
  return j;
}

inline Hyperparams hyperparams_from_json(const Json& j, Hyperparams h = {}) {
  using namespace detail;
  for_each_key(j, "train", [&h](const std::string& k, const Json& v) {
    const std::string w = "train." + k;
    if (k == "lr") h.lr = get_real(v, w);
    else if (k == "batch") h.batch = get_size(v, w);
    else if (k == "lambda") h.lambda = get_real(v, w);
    else if (k == "alpha") h.alpha = get_real(v, w);
    else if (k == "gamma") h.gamma = get_real(v, w);
    else if (k == "atoms") h.atoms = get_size(v, w);
    else if (k == "v_min") h.v_min = get_real(v, w);
    else if (k == "v_max") h.v_max = get_real(v, w);
    else if (k == "k_update") h.k_update = get_size(v, w);
    else if (k == "epochs") h.epochs = get_size(v, w);
    else if (k == "seed") h.seed = get_seed(v, w);
    else if (k == "distributional") h.distributional = get_bool(v, w);
    else if (k == "alignment") h.alignment = get_bool(v, w);
    else if (k == "target_selects_next_action") h.target_selects_next_action = get_bool(v, w);
    else if (k == "feature") h.feature = get_size(v, w);
    else if (k == "hidden") h.hidden = get_size(v, w);
    else if (k == "head_init_scale") h.head_init_scale = get_real(v, w);
    else if (k == "eval_episodes") h.eval_episodes = static_cast<int>(get_int(v, w));
    else return false;
    return true;
  });
  try {
    h.validate();
  } catch (const InvalidArgument& e) {
    throw SchemaError(std::string("train: ") + e.what());
  }
  return h;
}

// --- RunConfig ----------------------------------------------------------------

inline Json to_json(const RunConfig& c) {
  Json j;
  j["env"] = to_json(c.env);
  j["data"] = {{"num_instructions", c.data.num_instructions},
               {"mapping_seed", c.data.mapping_seed},
               {"seed", c.data.seed},
               {"n_traj", c.data.n_traj},
               {"success_ratio", c.data.success_ratio}};
  j["train"] = to_json(c.train);
  const auto& t = c.analysis.thresholds;
  j["analysis"] = {{"delta", t.delta},
                   {"d", t.d},
                   {"eta", t.eta},
                   {"epsilon", t.epsilon},
                   {"n_episodes", c.analysis.n_episodes},
                   {"n_states", c.analysis.n_states},
                   {"seed", c.analysis.seed}};
  j["sweep"] = {{"counts", c.sweep.counts},
                {"algorithms", c.sweep.algorithms},
                {"seeds", c.sweep.seeds},
                {"grad_steps", c.sweep.grad_steps}};
  j["out_dir"] = c.out_dir;
  return j;
}

/// Every field has a default; unknown keys at any level are rejected.
inline RunConfig run_config_from_json(const Json& j) {
  using namespace detail;
  RunConfig c;
  for_each_key(j, "config", [&c](const std::string& k, const Json& v) {
    if (k == "env") {
      c.env = env_config_from_json(v);
    } else if (k == "data") {
      for_each_key(v, "data", [&c](const std::string& k2, const Json& v2) {
        const std::string w = "data." + k2;
        if (k2 == "num_instructions") c.data.num_instructions = static_cast<int>(get_int(v2, w));
        else if (k2 == "mapping_seed") c.data.mapping_seed = get_seed(v2, w);
        else if (k2 == "seed") c.data.seed = get_seed(v2, w);
        else if (k2 == "n_traj") c.data.n_traj = get_size(v2, w);
        else if (k2 == "success_ratio") c.data.success_ratio = get_real(v2, w);
        else return false;
        return true;
      });
    } else if (k == "train") {
      c.train = hyperparams_from_json(v, c.train);
    } else if (k == "analysis") {
      for_each_key(v, "analysis", [&c](const std::string& k2, const Json& v2) {
        const std::string w = "analysis." + k2;
        auto& a = c.analysis;
        if (k2 == "delta") a.thresholds.delta = get_real(v2, w);
        else if (k2 == "d") a.thresholds.d = get_real(v2, w);
        else if (k2 == "eta") a.thresholds.eta = get_real(v2, w);
        else if (k2 == "epsilon") a.thresholds.epsilon = get_real(v2, w);
        else if (k2 == "n_episodes") a.n_episodes = static_cast<int>(get_int(v2, w));
        else if (k2 == "n_states") a.n_states = static_cast<int>(get_int(v2, w));
        else if (k2 == "seed") a.seed = get_seed(v2, w);
        else return false;
        return true;
      });
    } else if (k == "sweep") {
      for_each_key(v, "sweep", [&c](const std::string& k2, const Json& v2) {
        const std::string w = "sweep." + k2;
        if (k2 == "grad_steps") {
          c.sweep.grad_steps = get_int(v2, w);
          return true;
        }
        if (!v2.is_array()) throw SchemaError(w + " must be an array");
        if (k2 == "counts") {
          c.sweep.counts.clear();
          for (const auto& x : v2) c.sweep.counts.push_back(static_cast<int>(get_int(x, w + "[]")));
        } else if (k2 == "algorithms") {
          c.sweep.algorithms.clear();
          for (const auto& x : v2) {
            if (!x.is_string()) throw SchemaError(w + "[] must be a string");
            c.sweep.algorithms.push_back(x.get<std::string>());
          }
        } else if (k2 == "seeds") {
          c.sweep.seeds.clear();
          for (const auto& x : v2) c.sweep.seeds.push_back(get_seed(x, w + "[]"));
        } else {
          return false;
        }
        return true;
      });
    } else if (k == "out_dir") {
      if (!v.is_string()) throw SchemaError("out_dir must be a string");
      c.out_dir = v.get<std::string>();
    } else {
      return false;
    }
    return true;
  });
  validate(c);
  return c;
}

inline void validate(const RunConfig& c) {
  GridWorld::validate(c.env);
  if (c.data.num_instructions < 1) throw SchemaError("data.num_instructions must be >= 1");
  if (c.data.n_traj < 1) throw SchemaError("data.n_traj must be >= 1");
  if (!(c.data.success_ratio >= 0.0 && c.data.success_ratio <= 1.0))
    throw SchemaError("data.success_ratio must lie in [0, 1]");
  try {
    c.train.validate();
    c.analysis.thresholds.validate();
    for (const auto& a : c.sweep.algorithms) algorithm_by_name(a);
  } catch (const InvalidArgument& e) {
    throw SchemaError(e.what());
  }
  if (c.analysis.n_episodes < 1) throw SchemaError("analysis.n_episodes must be >= 1");
  if (c.analysis.n_states < 1) throw SchemaError("analysis.n_states must be >= 1");
  if (c.sweep.grad_steps < 1) throw SchemaError("sweep.grad_steps must be >= 1");
  for (int n : c.sweep.counts)
    if (n < 1) throw SchemaError("sweep.counts entries must be >= 1");
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(path + ": " + e.what());
  }
}

inline void write_json_file(const Json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << '\n';
}

inline RunConfig load_run_config(const std::string& path) { return run_config_from_json(read_json_file(path)); }

/// DAIL_SEED, when set, replaces the training seed.
inline void apply_seed_override(RunConfig& c) {
  const char* s = std::getenv("DAIL_SEED");
  if (s == nullptr || *s == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  if (*end != '\0' || s[0] == '-') throw SchemaError(std::string("DAIL_SEED is not a non-negative integer: ") + s);
  c.train.seed = v;
}

// --- Run directories -------------------------------------------------------------
// checkpoint.bin (online), target.bin, agent.json (hyperparams + mapping metadata)

inline Json agent_sidecar(const TrainedAgent& a) {
  Json j;
  j["hyperparams"] = to_json(a.hp);
  j["obs_dim"] = a.online.dims().obs_dim;
  j["num_instructions"] = a.num_instructions;
  j["mapping_seed"] = a.mapping_seed;
  j["gradient_steps"] = a.gradient_steps;
  return j;
}

inline void save_agent(const TrainedAgent& a, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_checkpoint((dir / "checkpoint.bin").string(), a.online.parameters());
  save_checkpoint((dir / "target.bin").string(), a.target.parameters());
  write_json_file(agent_sidecar(a), (dir / "agent.json").string());
}

inline TrainedAgent load_agent(const std::filesystem::path& dir) {
  const auto ckpt = dir / "checkpoint.bin";
  if (!std::filesystem::exists(ckpt)) throw std::runtime_error("no checkpoint in " + dir.string());
  const Json j = read_json_file((dir / "agent.json").string());
  try {
    const Hyperparams hp = hyperparams_from_json(j.at("hyperparams"));
    TrainedAgent a(hp, j.at("obs_dim").get<std::size_t>(), j.at("num_instructions").get<int>(),
                   j.at("mapping_seed").get<std::uint64_t>());
    a.gradient_steps = j.at("gradient_steps").get<long>();
    assign_checkpoint(a.online.parameters(), load_checkpoint(ckpt.string()));
    assign_checkpoint(a.target.parameters(), load_checkpoint((dir / "target.bin").string()));
    return a;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("agent.json: " + std::string(e.what()));
  }
}

}  // namespace dail
