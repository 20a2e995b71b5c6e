#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dail/errors.hpp"
#include "dail/gridworld.hpp"
#include "dail/rng.hpp"

namespace dail {

/// One-hot observation stored by its hot index.
struct Observation {
  std::size_t index = 0;
  std::size_t size = 0;

  std::vector<double> to_vector() const {
    std::vector<double> v(size, 0.0);
    v.at(index) = 1.0;
    return v;
  }
  friend bool operator==(const Observation&, const Observation&) = default;
};

inline Observation observe(const GridWorld& env, const EpisodeState& s) {
  return {env.observation_index(s), env.config().observation_size()};
}

struct Transition {
  Observation obs;
  Action action = Action::TurnLeft;
  double reward = 0.0;
  Observation next_obs;
  bool done = false;
  friend bool operator==(const Transition&, const Transition&) = default;
};

struct Trajectory {
  std::vector<Transition> transitions;
  int instruction_id = 0;
  bool success = false;
  double episode_return = 0.0;
  std::string source = "random";

  std::size_t length() const { return transitions.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct DatasetMeta {
  int num_instructions = 1;
  std::uint64_t mapping_seed = 0;
  std::uint64_t collection_seed = 0;
  double success_ratio = 0.0;
  bool balanced_instructions = true;
  std::size_t observation_size = 0;
  std::map<std::string, std::size_t> source_mix;
  friend bool operator==(const DatasetMeta&, const DatasetMeta&) = default;
};

struct OfflineDataset {
  std::vector<Trajectory> trajectories;
  DatasetMeta meta;

  std::size_t size() const { return trajectories.size(); }
  std::size_t num_transitions() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
  }
  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

/// A behaviour policy sees the current state and the transitions taken so far in the
/// episode. Policies that carry internal state must reset it when `history` is empty.
using Policy = std::function<Action(const EpisodeState& state, std::span<const Transition> history, Rng& rng)>;

inline Policy uniform_random_policy() {
  return [](const EpisodeState&, std::span<const Transition>, Rng& rng) {
    return action_from_index(static_cast<int>(uniform_below(rng, kNumActions)));
  };
}

inline Policy expert_policy(const GridWorld& env) {
  return [&env](const EpisodeState& s, std::span<const Transition>, Rng&) { return env.expert_action(s); };
}

/// Expert with probability 1 - epsilon, uniform random otherwise.
inline Policy eps_expert_policy(const GridWorld& env, double epsilon) {
  return [&env, epsilon](const EpisodeState& s, std::span<const Transition>, Rng& rng) {
    const auto random_action = [&rng] { return action_from_index(static_cast<int>(uniform_below(rng, kNumActions))); };
    if (uniform01(rng) < epsilon) return random_action();
    try {
      return env.expert_action(s);
    } catch (const NoPath&) {
      return random_action();  // detours used up the horizon; the episode fails either way
    }
  };
}

inline Trajectory rollout(const GridWorld& env, const InstructionMapping& mapping, int instruction_id,
                          const Policy& policy, Rng& rng) {
  Trajectory traj;
  traj.instruction_id = instruction_id;
  EpisodeState state = env.reset(mapping, instruction_id);
  while (!state.done) {
    const Action a = policy(state, traj.transitions, rng);
    const StepResult res = env.step(state, a);
    traj.transitions.push_back({observe(env, state), a, res.reward, observe(env, res.state), res.done});
    traj.episode_return += res.reward;
    state = res.state;
  }
  traj.success = traj.transitions.back().reward > 0.0;
  return traj;
}

namespace detail {

inline DatasetMeta make_meta(const GridWorld& env, const InstructionMapping& mapping, std::uint64_t seed,
                             const std::vector<Trajectory>& trajs) {
  DatasetMeta meta;
  meta.num_instructions = mapping.num_instructions();
  meta.mapping_seed = mapping.seed;
  meta.collection_seed = seed;
  meta.observation_size = env.config().observation_size();
  std::size_t successes = 0;
  for (const auto& t : trajs) {
    successes += t.success;
    meta.source_mix[t.source] += 1;
  }
  meta.success_ratio = trajs.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(trajs.size());
  return meta;
}

}  // namespace detail

inline constexpr int kRejectionLimit = 200;
inline constexpr double kFallbackEpsilon = 0.3;

/// Offline dataset with exactly round(ratio * n) successful trajectories. Slots are
/// assigned instructions round-robin (successes first, so both groups are balanced over
/// instructions) and then shuffled. Every slot draws from its own PRNG stream derived
/// from (seed, slot), so slots can be generated in any order or in parallel.
inline OfflineDataset collect_mixed(const GridWorld& env, const InstructionMapping& mapping, std::size_t n_traj,
                                    double success_ratio, std::uint64_t seed) {
  if (n_traj < 1) throw InvalidArgument("n_traj must be >= 1");
  if (!(success_ratio >= 0.0 && success_ratio <= 1.0)) throw InvalidArgument("success_ratio must lie in [0, 1]");
  const auto n_success = static_cast<std::size_t>(std::llround(success_ratio * static_cast<double>(n_traj)));
  const auto num_ids = static_cast<std::size_t>(mapping.num_instructions());

  struct Slot {
    int instruction_id;
    bool success;
  };
  std::vector<Slot> slots(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i) slots[i] = {static_cast<int>(i % num_ids), i < n_success};
  Rng order_rng = make_rng(seed, 0x736c6f74);  // "slot"
  shuffle(slots, order_rng);

  const Policy random = uniform_random_policy();
  const Policy eps_expert = eps_expert_policy(env, kFallbackEpsilon);
  const Policy expert = expert_policy(env);

  std::vector<Trajectory> trajs(n_traj);
  for (std::size_t i = 0; i < n_traj; ++i) {
    Rng rng = make_rng(seed, 1 + i);
    const Slot slot = slots[i];
    Trajectory t;
    bool found = false;
    for (int attempt = 0; attempt < kRejectionLimit && !found; ++attempt) {
      t = rollout(env, mapping, slot.instruction_id, random, rng);
      found = t.success == slot.success;
    }
    if (!found && slot.success) {
      for (int attempt = 0; attempt < kRejectionLimit && !found; ++attempt) {
        t = rollout(env, mapping, slot.instruction_id, eps_expert, rng);
        t.source = "eps-expert";
        found = t.success;
      }
      if (!found) {
        t = rollout(env, mapping, slot.instruction_id, expert, rng);
        t.source = "expert";
        found = true;
      }
    }
    if (!found) throw std::runtime_error("could not sample a failing trajectory");
    trajs[i] = std::move(t);
  }
  OfflineDataset ds{std::move(trajs), {}};
  ds.meta = detail::make_meta(env, mapping, seed, ds.trajectories);
  return ds;
}

/// n_traj expert demonstrations with instructions cycled round-robin.
inline OfflineDataset collect_expert(const GridWorld& env, const InstructionMapping& mapping, std::size_t n_traj,
                                     std::uint64_t seed) {
  if (n_traj < 1) throw InvalidArgument("n_traj must be >= 1");
  const Policy expert = expert_policy(env);
  std::vector<Trajectory> trajs;
  for (std::size_t i = 0; i < n_traj; ++i) {
    Rng rng = make_rng(seed, 1 + i);
    Trajectory t = rollout(env, mapping, static_cast<int>(i % mapping.num_instructions()), expert, rng);
    t.source = "expert";
    trajs.push_back(std::move(t));
  }
  OfflineDataset ds{std::move(trajs), {}};
  ds.meta = detail::make_meta(env, mapping, seed, ds.trajectories);
  return ds;
}

/// Toy sizing: 64 trajectories per instruction up to 8 instructions, 1024 beyond.
inline std::size_t toy_dataset_size(int num_instructions) {
  return num_instructions <= 8 ? static_cast<std::size_t>(64 * num_instructions) : 1024;
}

// ---------------------------------------------------------------------------
// JSON Lines persistence. Line 1 is the metadata object; each following line is one
// trajectory. Observations are written as their one-hot index. Keys are emitted in a
// fixed order so identical datasets produce identical bytes.

inline constexpr const char* kDatasetFormat = "dail-dataset";
inline constexpr int kDatasetVersion = 1;

inline nlohmann::ordered_json meta_to_json(const DatasetMeta& m, std::size_t n_traj) {
  nlohmann::ordered_json j;
  j["format"] = kDatasetFormat;
  j["version"] = kDatasetVersion;
  j["n_traj"] = n_traj;
  j["num_instructions"] = m.num_instructions;
  j["mapping_seed"] = m.mapping_seed;
  j["collection_seed"] = m.collection_seed;
  j["success_ratio"] = m.success_ratio;
  j["balanced_instructions"] = m.balanced_instructions;
  j["observation_size"] = m.observation_size;
  nlohmann::ordered_json mix = nlohmann::ordered_json::object();
  for (const auto& [k, v] : m.source_mix) mix[k] = v;
  j["source_mix"] = mix;
  return j;
}

inline nlohmann::ordered_json trajectory_to_json(const Trajectory& t) {
  nlohmann::ordered_json j;
  j["instruction_id"] = t.instruction_id;
  j["success"] = t.success;
  j["episode_return"] = t.episode_return;
  j["source"] = t.source;
  auto obs = nlohmann::ordered_json::array(), actions = nlohmann::ordered_json::array(),
       rewards = nlohmann::ordered_json::array(), next_obs = nlohmann::ordered_json::array(),
       done = nlohmann::ordered_json::array();
  for (const Transition& tr : t.transitions) {
    obs.push_back(tr.obs.index);
    actions.push_back(to_index(tr.action));
    rewards.push_back(tr.reward);
    next_obs.push_back(tr.next_obs.index);
    done.push_back(tr.done);
  }
  j["obs"] = obs;
  j["actions"] = actions;
  j["rewards"] = rewards;
  j["next_obs"] = next_obs;
  j["done"] = done;
  return j;
}

inline void save_dataset(const OfflineDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write dataset " + path);
  out << meta_to_json(ds.meta, ds.size()).dump() << '\n';
  for (const Trajectory& t : ds.trajectories) out << trajectory_to_json(t).dump() << '\n';
  if (!out) throw std::runtime_error("failed writing dataset " + path);
}

namespace detail {

template <typename T>
T field(const nlohmann::ordered_json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw SchemaError("line " + std::to_string(line) + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw SchemaError("line " + std::to_string(line) + ": bad type for key '" + key + "'");
  }
}

}  // namespace detail

inline OfflineDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  OfflineDataset ds;
  std::string text;
  std::size_t line_no = 0;
  std::size_t expected = 0;
  bool have_meta = false;
  while (std::getline(in, text)) {
    ++line_no;
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), line_no);
    }
    if (!j.is_object()) throw ParseError("expected a JSON object", line_no);
    if (!have_meta) {
      if (detail::field<std::string>(j, "format", line_no) != kDatasetFormat)
        throw SchemaError("line 1: not a dataset file");
      if (detail::field<int>(j, "version", line_no) != kDatasetVersion)
        throw SchemaError("line 1: unsupported dataset version");
      expected = detail::field<std::size_t>(j, "n_traj", line_no);
      auto& m = ds.meta;
      m.num_instructions = detail::field<int>(j, "num_instructions", line_no);
      m.mapping_seed = detail::field<std::uint64_t>(j, "mapping_seed", line_no);
      m.collection_seed = detail::field<std::uint64_t>(j, "collection_seed", line_no);
      m.success_ratio = detail::field<double>(j, "success_ratio", line_no);
      m.balanced_instructions = detail::field<bool>(j, "balanced_instructions", line_no);
      m.observation_size = detail::field<std::size_t>(j, "observation_size", line_no);
      m.source_mix = detail::field<std::map<std::string, std::size_t>>(j, "source_mix", line_no);
      if (m.num_instructions < 1) throw SchemaError("line 1: num_instructions must be >= 1");
      have_meta = true;
      continue;
    }
    Trajectory t;
    t.instruction_id = detail::field<int>(j, "instruction_id", line_no);
    t.success = detail::field<bool>(j, "success", line_no);
    t.episode_return = detail::field<double>(j, "episode_return", line_no);
    t.source = detail::field<std::string>(j, "source", line_no);
    const auto obs = detail::field<std::vector<std::size_t>>(j, "obs", line_no);
    const auto actions = detail::field<std::vector<int>>(j, "actions", line_no);
    const auto rewards = detail::field<std::vector<double>>(j, "rewards", line_no);
    const auto next_obs = detail::field<std::vector<std::size_t>>(j, "next_obs", line_no);
    const auto done = detail::field<std::vector<bool>>(j, "done", line_no);
    const std::size_t n = obs.size();
    const std::string at = "line " + std::to_string(line_no) + ": ";
    if (n == 0 || actions.size() != n || rewards.size() != n || next_obs.size() != n || done.size() != n)
      throw SchemaError(at + "transition arrays are empty or of unequal length");
    if (t.instruction_id < 0 || t.instruction_id >= ds.meta.num_instructions)
      throw SchemaError(at + "instruction_id outside [0, num_instructions)");
    double ret = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (obs[k] >= ds.meta.observation_size || next_obs[k] >= ds.meta.observation_size)
        throw SchemaError(at + "observation index out of range");
      if (actions[k] < 0 || actions[k] >= kNumActions) throw SchemaError(at + "invalid action");
      if (done[k] != (k + 1 == n)) throw SchemaError(at + "done flag must mark exactly the last transition");
      t.transitions.push_back({{obs[k], ds.meta.observation_size},
                               action_from_index(actions[k]),
                               rewards[k],
                               {next_obs[k], ds.meta.observation_size},
                               static_cast<bool>(done[k])});
      ret += rewards[k];
    }
    if (t.success != (rewards.back() > 0.0)) throw SchemaError(at + "success flag disagrees with final reward");
    if (ret != t.episode_return) throw SchemaError(at + "episode_return is not the sum of rewards");
    ds.trajectories.push_back(std::move(t));
  }
  if (!have_meta) throw ParseError("missing metadata line", line_no + 1);
  if (ds.trajectories.size() != expected)
    throw SchemaError("metadata declares " + std::to_string(expected) + " trajectories, file holds " +
                      std::to_string(ds.trajectories.size()));
  std::size_t successes = 0;
  std::map<std::string, std::size_t> mix;
  for (const auto& t : ds.trajectories) {
    successes += t.success;
    mix[t.source] += 1;
  }
  const double realized = ds.trajectories.empty() ? 0.0 : static_cast<double>(successes) / static_cast<double>(expected);
  if (realized != ds.meta.success_ratio) throw SchemaError("metadata success_ratio disagrees with trajectories");
  if (mix != ds.meta.source_mix) throw SchemaError("metadata source_mix disagrees with trajectories");
  return ds;
}

}  // namespace dail
