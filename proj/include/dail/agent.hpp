#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "dail/alignment.hpp"
#include "dail/dataset.hpp"
#include "dail/distributional.hpp"
#include "dail/evaluation.hpp"
#include "dail/gridworld.hpp"
#include "dail/network.hpp"
#include "dail/rng.hpp"
#include "dail/tensor.hpp"

namespace dail {

struct Hyperparams {
  double lr = 3e-4;
  std::size_t batch = 64;
  double lambda = 0.2;  // alignment weight
  double alpha = 2.0;   // CQL weight
  double gamma = 0.99;
  std::size_t atoms = 51;
  double v_min = -20.0;
  double v_max = 20.0;
  std::size_t k_update = 1000;  // target sync period in gradient steps
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  bool distributional = true;
  bool alignment = true;
  bool target_selects_next_action = true;  // a' from target (true) or online (false) net
  std::size_t feature = 64;
  std::size_t hidden = 64;
  double head_init_scale = 1.0;
  int eval_episodes = kDefaultEvalEpisodes;

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    if (!(alpha >= 0.0)) throw InvalidArgument("alpha must be >= 0");
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidArgument("gamma must lie in [0, 1]");
    if (k_update < 1) throw InvalidArgument("k_update must be >= 1");
    if (batch < 1) throw InvalidArgument("batch must be >= 1");
    if (!(lr > 0.0)) throw InvalidArgument("lr must be > 0");
    if (!(head_init_scale >= 0.0)) throw InvalidArgument("head_init_scale must be >= 0");
    if (eval_episodes < 1) throw InvalidArgument("eval_episodes must be >= 1");
    make_support(v_min, v_max, atoms);
  }
};

/// Online parameters, target parameters (only ever overwritten by a copy of the online
/// ones), and the metadata needed to rebuild the mapping.
struct TrainedAgent {
  PolicyNetwork online;
  PolicyNetwork target;
  Hyperparams hp;
  Support support;
  int num_instructions = 1;
  std::uint64_t mapping_seed = 0;
  long gradient_steps = 0;

  TrainedAgent() = default;
  TrainedAgent(const Hyperparams& h, std::size_t obs_dim, int n_instructions, std::uint64_t map_seed)
      : hp(h), support(make_support(h.v_min, h.v_max, h.atoms)), num_instructions(n_instructions),
        mapping_seed(map_seed) {
    h.validate();
    const NetworkDims dims{obs_dim, static_cast<std::size_t>(n_instructions), h.feature, h.hidden, h.atoms,
                           kNumActions, h.head_init_scale};
    online = PolicyNetwork(dims, derive_seed(h.seed, 1));
    target = online;
  }

  void sync_target() { target.copy_values_from(online); }
};

// ---------------------------------------------------------------------------
// Distributions, Q values and action selection.

inline std::vector<CategoricalDistribution> dists_from_logits(std::span<const double> logits, std::size_t atoms) {
  if (logits.size() % atoms != 0) throw ShapeError("logit count is not a multiple of the atom count");
  std::vector<CategoricalDistribution> out;
  for (std::size_t a = 0; a < logits.size() / atoms; ++a)
    out.push_back({softmax(logits.subspan(a * atoms, atoms))});
  return out;
}

/// Z(s, ., x, l) for every action.
inline std::vector<CategoricalDistribution> forward(const PolicyNetwork& net, const Observation& obs, int instruction_id,
                                                    std::span<const double> history) {
  return dists_from_logits(net.forward_logits(obs, instruction_id, history), net.dims().atoms);
}

inline std::vector<double> q_values(const std::vector<CategoricalDistribution>& dists, const Support& support) {
  std::vector<double> q;
  q.reserve(dists.size());
  for (const auto& d : dists) q.push_back(expectation(d, support));
  return q;
}

/// argmax with ties to the lowest index.
inline std::size_t greedy_index(std::span<const double> q) {
  if (q.empty()) throw InvalidArgument("argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < q.size(); ++i)
    if (q[i] > q[best]) best = i;
  return best;
}

inline Action select_action(std::span<const double> q) { return action_from_index(static_cast<int>(greedy_index(q))); }

inline Action select_action(const TrainedAgent& agent, const Observation& obs, int instruction_id,
                            std::span<const double> history) {
  return select_action(q_values(forward(agent.online, obs, instruction_id, history), agent.support));
}

/// logsumexp(q) - q[a]
inline double cql_penalty(std::span<const double> q, std::size_t action) {
  if (action >= q.size()) throw IndexError("cql_penalty: action index out of range");
  if (q.size() == 1) return 0.0;
  return logsumexp(q) - q[action];
}

inline Var cql_penalty(Tape& t, Var q, std::size_t action) {
  if (action >= t.value(q).size()) throw IndexError("cql_penalty: action index out of range");
  return sub(t, logsumexp(t, q), pick(t, q, action));
}

// ---------------------------------------------------------------------------
// TD targets (no gradient flows through these).

namespace detail {

inline std::size_t next_action(const TrainedAgent& agent, const Observation& next_obs, int id,
                               std::span<const double> history_next, const std::vector<CategoricalDistribution>& target_dists) {
  if (agent.hp.target_selects_next_action) return greedy_index(q_values(target_dists, agent.support));
  return greedy_index(q_values(forward(agent.online, next_obs, id, history_next), agent.support));
}

}  // namespace detail

/// Projected distributional target for one transition. history_next is x_t, the
/// encoding of the prefix up to and including this transition.
inline CategoricalDistribution build_td_target(const TrainedAgent& agent, const Transition& tr, int instruction_id,
                                               std::span<const double> history_next) {
  if (tr.done) {
    const auto unit = CategoricalDistribution::point_mass(agent.support, 0);
    return project_target(tr.reward, agent.hp.gamma, unit.probs, agent.support, true);
  }
  const auto dists = forward(agent.target, tr.next_obs, instruction_id, history_next);
  const std::size_t a_next = detail::next_action(agent, tr.next_obs, instruction_id, history_next, dists);
  return project_target(tr.reward, agent.hp.gamma, dists[a_next].probs, agent.support, false);
}

/// r + gamma * max_a Q_target(s', a, x', l); r alone on terminal transitions.
inline double build_scalar_td_target(const TrainedAgent& agent, const Transition& tr, int instruction_id,
                                     std::span<const double> history_next) {
  if (tr.done) return tr.reward;
  const auto dists = forward(agent.target, tr.next_obs, instruction_id, history_next);
  const std::size_t a_next = detail::next_action(agent, tr.next_obs, instruction_id, history_next, dists);
  return tr.reward + agent.hp.gamma * expectation(dists[a_next], agent.support);
}

// ---------------------------------------------------------------------------
// Losses.

struct LossParts {
  Var dist;                // L_Dist (KL) or the squared-TD replacement
  std::optional<Var> align;  // L_c, absent when alignment is off or the batch has no negatives
  Var cql;                 // L_CQL
  Var total;
};

struct LossValues {
  double dist = 0.0;
  double align = 0.0;
  double cql = 0.0;
  double total = 0.0;
};

inline LossValues values_of(const Tape& t, const LossParts& p) {
  return {t.scalar(p.dist), p.align ? t.scalar(*p.align) : 0.0, t.scalar(p.cql), t.scalar(p.total)};
}

/// Builds L_tot = L_Dist + lambda L_c + alpha L_CQL for a batch of trajectories on `t`.
/// Per-timestep terms are averaged within each trajectory, then over the batch.
inline LossParts total_loss(Tape& t, TrainedAgent& agent, std::span<const Trajectory* const> batch) {
  if (batch.empty()) throw InvalidArgument("total_loss on an empty batch");
  PolicyNetwork& net = agent.online;
  const Hyperparams& hp = agent.hp;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  std::vector<Var> dist_terms, cql_terms, traj_embs, instr_embs;
  std::vector<int> ids;
  for (const Trajectory* traj : batch) {
    const auto& trs = traj->transitions;
    const int id = traj->instruction_id;
    const std::vector<Var> hist = encode_histories(t, net, trs);
    const Var instr = net.instruction(t, id);

    const std::vector<std::vector<double>> target_hist = [&] {
      std::vector<std::vector<double>> hs{std::vector<double>(net.dims().feature, 0.0)};
      for (const Transition& tr : trs) hs.push_back(agent.target.advance_history(hs.back(), tr));
      return hs;
    }();

    std::vector<Var> per_step_dist, per_step_cql;
    for (std::size_t k = 0; k < trs.size(); ++k) {
      const Transition& tr = trs[k];
      const auto a = static_cast<std::size_t>(to_index(tr.action));
      const Var all = net.logits(t, net.encode_obs(t, tr.obs), instr, hist[k]);
      std::vector<Var> qs;
      for (std::size_t b = 0; b < net.dims().actions; ++b)
        qs.push_back(dot_const(t, softmax(t, net.action_logits(t, all, b)), agent.support.atoms));
      const Var q = stack(t, qs);
      if (hp.distributional) {
        const auto target = build_td_target(agent, tr, id, target_hist[k + 1]);
        per_step_dist.push_back(kl_div(t, target.probs, net.action_logits(t, all, a)));
      } else {
        const double y = build_scalar_td_target(agent, tr, id, target_hist[k + 1]);
        const Var err = sub(t, qs[a], t.constant({y}));
        per_step_dist.push_back(square(t, err));
      }
      per_step_cql.push_back(cql_penalty(t, q, a));
    }
    const double inv_len = 1.0 / static_cast<double>(trs.size());
    dist_terms.push_back(scale(t, add_scalars(t, per_step_dist), inv_len));
    cql_terms.push_back(scale(t, add_scalars(t, per_step_cql), inv_len));
    traj_embs.push_back(hist.back());
    instr_embs.push_back(instr);
    ids.push_back(id);
  }

  LossParts parts;
  parts.dist = scale(t, add_scalars(t, dist_terms), inv_batch);
  parts.cql = scale(t, add_scalars(t, cql_terms), inv_batch);
  std::vector<Var> total_terms{parts.dist, scale(t, parts.cql, hp.alpha)};
  if (hp.alignment && batch.size() >= 2 && has_negatives(ids)) {
    parts.align = nce_loss(t, traj_embs, instr_embs, ids);
    total_terms.push_back(scale(t, *parts.align, hp.lambda));
  }
  parts.total = add_scalars(t, total_terms);
  return parts;
}

// ---------------------------------------------------------------------------
// Greedy policy wrapper with an incrementally maintained history.

class GreedyAgentPolicy {
 public:
  GreedyAgentPolicy(const TrainedAgent& agent, const GridWorld& env) : agent_(&agent), env_(&env) {}

  Action operator()(const EpisodeState& s, std::span<const Transition> history, Rng&) {
    if (history.empty() || history.size() < seen_) {
      hidden_.assign(agent_->online.dims().feature, 0.0);
      seen_ = 0;
    }
    for (; seen_ < history.size(); ++seen_) hidden_ = agent_->online.advance_history(hidden_, history[seen_]);
    return select_action(*agent_, observe(*env_, s), s.instruction_id, hidden_);
  }

  const std::vector<double>& hidden() const { return hidden_; }

 private:
  const TrainedAgent* agent_;
  const GridWorld* env_;
  std::vector<double> hidden_;
  std::size_t seen_ = 0;
};

inline Policy greedy_policy(const TrainedAgent& agent, const GridWorld& env) { return GreedyAgentPolicy(agent, env); }

inline double evaluate(const TrainedAgent& agent, const GridWorld& env, const InstructionMapping& mapping,
                       int n_episodes = kDefaultEvalEpisodes, std::uint64_t seed = 0) {
  return evaluate(greedy_policy(agent, env), env, mapping, n_episodes, seed);
}

// ---------------------------------------------------------------------------
// Training loop.

struct TrainResult {
  TrainedAgent agent;
  RunMetrics metrics;
};

/// Adam on total_loss for epochs x ceil(|D| / batch) steps. Each epoch is one shuffled
/// pass; the target network is synced at init and every k_update steps. Deterministic
/// for a given seed.
inline TrainResult train(const Hyperparams& hp, const OfflineDataset& data, const GridWorld& env,
                         const InstructionMapping& mapping) {
  hp.validate();
  if (data.trajectories.empty()) throw InvalidArgument("train on an empty dataset");
  if (data.meta.num_instructions != mapping.num_instructions())
    throw InvalidArgument("dataset and mapping disagree on the number of instructions");
  TrainResult result{TrainedAgent(hp, env.config().observation_size(), mapping.num_instructions(), mapping.seed), {}};
  TrainedAgent& agent = result.agent;
  const AdamConfig adam{hp.lr, 0.9, 0.999, 1e-8};

  std::vector<std::size_t> order(data.trajectories.size());
  Rng batch_rng = make_rng(hp.seed, 2);
  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order, batch_rng);
    LossValues sum;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch) {
      const std::size_t end = std::min(order.size(), start + hp.batch);
      std::vector<const Trajectory*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&data.trajectories[order[i]]);
      Tape tape;
      const LossParts parts = total_loss(tape, agent, batch);
      const LossValues v = values_of(tape, parts);
      tape.backward(parts.total);
      adam_step(agent.online.parameters(), adam, ++agent.gradient_steps);
      if (agent.gradient_steps % static_cast<long>(hp.k_update) == 0) agent.sync_target();
      sum.dist += v.dist;
      sum.align += v.align;
      sum.cql += v.cql;
      sum.total += v.total;
      ++batches;
    }
    const double inv = 1.0 / static_cast<double>(batches);
    EpochMetrics row;
    row.epoch = static_cast<int>(epoch);
    row.l_dist = sum.dist * inv;
    row.l_c = sum.align * inv;
    row.l_cql = sum.cql * inv;
    row.l_tot = sum.total * inv;
    row.eval_success_rate = evaluate(agent, env, mapping, hp.eval_episodes, derive_seed(hp.seed, 1000 + epoch));
    result.metrics.rows.push_back(row);
  }
  if (!result.metrics.rows.empty()) result.metrics.final_success = result.metrics.rows.back().eval_success_rate;
  return result;
}

}  // namespace dail
