#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dail/agent.hpp"
#include "oracles.hpp"

using namespace dail;

namespace {

GridWorld env() { return GridWorld(default_env_config()); }

Hyperparams small_hp(std::uint64_t seed = 0) {
  Hyperparams h;
  h.feature = 8;
  h.hidden = 8;
  h.seed = seed;
  h.batch = 4;
  h.epochs = 2;
  h.eval_episodes = 4;
  return h;
}

TrainedAgent make_agent(const Hyperparams& h, int n_ids = 4) {
  return TrainedAgent(h, env().config().observation_size(), n_ids, 1);
}

OfflineDataset data(int n_ids, std::size_t n, std::uint64_t seed, double ratio = 0.5) {
  return collect_mixed(env(), make_mapping(n_ids, 1), n, ratio, seed);
}

std::vector<const Trajectory*> pointers(const OfflineDataset& d, std::size_t n) {
  std::vector<const Trajectory*> out;
  for (std::size_t i = 0; i < n && i < d.size(); ++i) out.push_back(&d.trajectories[i]);
  return out;
}

std::vector<double> zeros(const TrainedAgent& a) { return std::vector<double>(a.online.dims().feature, 0.0); }

}  // namespace

TEST(Forward, ZeroHeadGivesUniformAtoms) {
  auto h = small_hp();
  h.head_init_scale = 0.0;
  const auto a = make_agent(h);
  const auto obs = observe(env(), env().reset(make_mapping(4, 1), 0));
  const auto dists = forward(a.online, obs, 2, zeros(a));
  ASSERT_EQ(dists.size(), static_cast<std::size_t>(kNumActions));
  for (const auto& d : dists)
    for (double p : d.probs) EXPECT_NEAR(p, 1.0 / 51.0, 1e-15);
  for (double q : q_values(dists, a.support)) EXPECT_NEAR(q, 0.0, 1e-12);
}

TEST(Forward, NormalisedAndBounded) {
  const auto a = make_agent(small_hp(3));
  Rng rng = make_rng(3);
  const auto e = env();
  for (int k = 0; k < 20; ++k) {
    const Observation obs{uniform_below(rng, e.config().observation_size()), e.config().observation_size()};
    std::vector<double> hist(8);
    for (double& v : hist) v = uniform(rng, -1.0, 1.0);
    const auto dists = forward(a.online, obs, static_cast<int>(uniform_below(rng, 4)), hist);
    const auto q = q_values(dists, a.support);
    for (std::size_t i = 0; i < dists.size(); ++i) {
      EXPECT_NEAR(std::accumulate(dists[i].probs.begin(), dists[i].probs.end(), 0.0), 1.0, 1e-9);
      EXPECT_NEAR(q[i], oracle::mean(dists[i].probs, a.support), 1e-12);
      EXPECT_GE(q[i], -20.0);
      EXPECT_LE(q[i], 20.0);
    }
  }
  EXPECT_THROW(forward(a.online, Observation{0, 5}, 0, zeros(a)), ShapeError);
  EXPECT_THROW(forward(a.online, Observation{0, 324}, 0, std::vector<double>(3)), ShapeError);
}

TEST(QValues, Examples) {
  const Support s = make_support(-20.0, 20.0, 51);
  const auto u = CategoricalDistribution::uniform(s);
  std::vector<CategoricalDistribution> d{u, CategoricalDistribution::point_mass(s, 50), u};
  const auto q = q_values(d, s);
  EXPECT_NEAR(q[0], 0.0, 1e-12);
  EXPECT_EQ(q[1], 20.0);
}

TEST(CqlPenalty, Examples) {
  EXPECT_NEAR(cql_penalty(std::vector<double>{0, 0, 0}, 2), std::log(3.0), 1e-15);
  EXPECT_NEAR(cql_penalty(std::vector<double>{1, 0, 0}, 0), std::log(std::exp(1.0) + 2.0) - 1.0, 1e-15);
  EXPECT_NEAR(std::log(std::exp(1.0) + 2.0) - 1.0, 0.5514, 1e-4);
  EXPECT_EQ(cql_penalty(std::vector<double>{4.2}, 0), 0.0);
  EXPECT_THROW(cql_penalty(std::vector<double>{1, 2}, 2), IndexError);
  Tape t;
  const Var q = t.constant({0.3, -0.2, 1.5});
  EXPECT_NEAR(t.scalar(cql_penalty(t, q, 1)), cql_penalty(std::vector<double>{0.3, -0.2, 1.5}, 1), 1e-14);
}

TEST(SelectAction, ArgmaxAndTies) {
  EXPECT_EQ(select_action(std::vector<double>{0.2, 0.9, 0.1}), Action::TurnRight);
  EXPECT_EQ(select_action(std::vector<double>{0.5, 0.5, 0.5}), Action::TurnLeft);
  EXPECT_EQ(select_action(std::vector<double>{0.1, 0.3, 0.3}), Action::TurnRight);
}

TEST(SelectAction, InvariantUnderIncreasingAffineMaps) {
  Rng rng = make_rng(4);
  for (int k = 0; k < 500; ++k) {
    std::vector<double> q(3);
    for (double& v : q) v = uniform(rng, -5.0, 5.0);
    const double a = std::ldexp(1.0, static_cast<int>(uniform_below(rng, 8)) - 4);
    const double b = std::round(uniform(rng, -8.0, 8.0));
    std::vector<double> tq(q);
    for (double& v : tq) v = a * v + b;
    EXPECT_EQ(select_action(q), select_action(tq));
  }
}

TEST(SelectAction, SupportShiftKeepsArgmax) {
  const auto a = make_agent(small_hp(5));
  const auto obs = observe(env(), env().reset(make_mapping(4, 1), 1));
  const auto dists = forward(a.online, obs, 1, zeros(a));
  const Support shifted = make_support(-10.0, 30.0, 51);
  EXPECT_EQ(select_action(q_values(dists, a.support)), select_action(q_values(dists, shifted)));
}

TEST(TdTarget, TerminalRewardIsProjectedPointMass) {
  const auto a = make_agent(small_hp());
  const auto d = data(4, 8, 2, 1.0);
  Transition tr = d.trajectories[0].transitions.back();
  tr.reward = 0.7;
  ASSERT_TRUE(tr.done);
  const auto target = build_td_target(a, tr, 0, zeros(a));
  EXPECT_NEAR(target.probs[25], 0.125, 1e-12);
  EXPECT_NEAR(target.probs[26], 0.875, 1e-12);
}

TEST(TdTarget, GammaZeroDependsOnlyOnReward) {
  auto h = small_hp();
  h.gamma = 0.0;
  const auto a = make_agent(h), b = make_agent(small_hp(99));
  const auto d = data(4, 8, 2, 0.0);
  Transition tr = d.trajectories[0].transitions.front();
  ASSERT_FALSE(tr.done);
  tr.reward = 0.3;
  auto b2 = b;
  b2.hp.gamma = 0.0;
  const auto ta = build_td_target(a, tr, 0, zeros(a)), tb = build_td_target(b2, tr, 3, zeros(b2));
  for (std::size_t i = 0; i < 51; ++i) EXPECT_NEAR(ta.probs[i], tb.probs[i], 1e-15);
}

TEST(TdTarget, AfterSyncMatchesOnlineGreedyOracle) {
  auto a = make_agent(small_hp(7));
  for (auto& p : a.online.parameters())
    for (double& v : p.values) v *= 1.5;
  a.sync_target();
  const auto d = data(4, 16, 3, 0.0);
  for (const auto& traj : d.trajectories) {
    std::vector<double> h = zeros(a);
    for (const auto& tr : traj.transitions) {
      h = a.online.advance_history(h, tr);
      if (tr.done) continue;
      const auto dists = forward(a.online, tr.next_obs, traj.instruction_id, h);
      const std::size_t best = greedy_index(q_values(dists, a.support));
      const auto want = oracle::projection(tr.reward, a.hp.gamma, dists[best].probs, a.support, false);
      const auto got = build_td_target(a, tr, traj.instruction_id, h);
      for (std::size_t i = 0; i < 51; ++i) ASSERT_NEAR(got.probs[i], want[i], 1e-12);
    }
  }
}

TEST(TotalLoss, ZeroInitTerminalZeroRewardIsLog51) {
  auto h = small_hp();
  h.head_init_scale = 0.0;
  h.lambda = 0.0;
  h.alpha = 0.0;
  auto a = make_agent(h);
  const auto d = data(4, 4, 5, 1.0);
  OfflineDataset terminal;
  for (const auto& traj : d.trajectories) {
    Trajectory t;
    t.instruction_id = traj.instruction_id;
    t.transitions.push_back(traj.transitions.back());
    t.transitions.back().reward = 0.0;
    terminal.trajectories.push_back(t);
  }
  Tape t;
  const auto parts = total_loss(t, a, pointers(terminal, 4));
  std::vector<double> target(51, 0.0);
  target[25] = 1.0;
  EXPECT_NEAR(t.scalar(parts.dist), kl_loss(target, std::vector<double>(51, 0.0)), 1e-12);
  EXPECT_NEAR(t.scalar(parts.dist), std::log(51.0), 1e-12);
  EXPECT_NEAR(t.scalar(parts.total), t.scalar(parts.dist), 1e-15);
}

TEST(TotalLoss, DecompositionMatchesComponents) {
  auto h = small_hp(11);
  h.lambda = 0.7;
  h.alpha = 1.3;
  auto a = make_agent(h);
  const auto d = data(4, 6, 6);
  const auto batch = pointers(d, 6);
  Tape t;
  const auto parts = total_loss(t, a, batch);
  ASSERT_TRUE(parts.align.has_value());
  const double want = t.scalar(parts.dist) + 0.7 * t.scalar(*parts.align) + 1.3 * t.scalar(parts.cql);
  EXPECT_NEAR(t.scalar(parts.total), want, 1e-12);
  Tape t2;
  EXPECT_NEAR(t2.scalar(nce_loss(t2, a.online, batch)), t.scalar(*parts.align), 1e-12);
}

TEST(TotalLoss, AblatedObjectiveIsScalarTdPlusCql) {
  auto h = small_hp(12);
  h.distributional = false;
  h.alignment = false;
  auto a = make_agent(h);
  const auto d = data(4, 3, 8);
  const auto batch = pointers(d, 3);
  Tape t;
  const auto parts = total_loss(t, a, batch);
  EXPECT_FALSE(parts.align.has_value());

  double td = 0.0, cql = 0.0;
  for (const Trajectory* traj : batch) {
    std::vector<double> hist = zeros(a);
    double td_sum = 0.0, cql_sum = 0.0;
    for (const auto& tr : traj->transitions) {
      const auto q = q_values(forward(a.online, tr.obs, traj->instruction_id, hist), a.support);
      const auto next_hist = a.online.advance_history(hist, tr);
      double y = tr.reward;
      if (!tr.done) {
        const auto qn = q_values(forward(a.target, tr.next_obs, traj->instruction_id, next_hist), a.support);
        y += a.hp.gamma * *std::max_element(qn.begin(), qn.end());
      }
      const auto k = static_cast<std::size_t>(to_index(tr.action));
      td_sum += (q[k] - y) * (q[k] - y);
      cql_sum += std::log(std::exp(q[0]) + std::exp(q[1]) + std::exp(q[2])) - q[k];
      hist = next_hist;
    }
    td += td_sum / static_cast<double>(traj->length());
    cql += cql_sum / static_cast<double>(traj->length());
  }
  td /= 3.0;
  cql /= 3.0;
  EXPECT_NEAR(t.scalar(parts.dist), td, 1e-10);
  EXPECT_NEAR(t.scalar(parts.cql), cql, 1e-10);
  EXPECT_NEAR(t.scalar(parts.total), td + h.alpha * cql, 1e-10);
}

TEST(TotalLoss, GradientCheckAcrossModes) {
  for (int mode = 0; mode < 4; ++mode) {
    auto h = small_hp(20 + mode);
    h.distributional = mode % 2 == 0;
    h.alignment = mode < 2;
    h.hidden = 4;
    h.feature = 4;
    auto a = make_agent(h, 3);
    const auto d = data(3, 2, 30 + mode);
    const auto batch = pointers(d, 2);
    const auto loss = [&](Tape& t) { return total_loss(t, a, batch).total; };
    EXPECT_LT(grad_check(loss, a.online.parameters()), 1e-4) << "mode " << mode;
  }
}

TEST(Train, ZeroEpochsReturnsInitialAgent) {
  auto h = small_hp(3);
  h.epochs = 0;
  const auto d = data(4, 8, 1);
  const auto r = train(h, d, env(), make_mapping(4, 1));
  const auto fresh = make_agent(h);
  EXPECT_EQ(r.agent.gradient_steps, 0);
  EXPECT_TRUE(r.metrics.rows.empty());
  for (std::size_t k = 0; k < fresh.online.parameters().size(); ++k) {
    EXPECT_EQ(r.agent.online.parameters()[k].values, fresh.online.parameters()[k].values);
    EXPECT_EQ(r.agent.target.parameters()[k].values, fresh.online.parameters()[k].values);
  }
}

TEST(Train, Errors) {
  const auto h = small_hp();
  EXPECT_THROW(train(h, OfflineDataset{}, env(), make_mapping(4, 1)), InvalidArgument);
  EXPECT_THROW(train(h, data(4, 8, 1), env(), make_mapping(5, 1)), InvalidArgument);
  auto bad = h;
  bad.k_update = 0;
  EXPECT_THROW(train(bad, data(4, 8, 1), env(), make_mapping(4, 1)), InvalidArgument);
  bad = h;
  bad.gamma = 1.5;
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = h;
  bad.lambda = -0.1;
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(Train, StepCountAndTargetStaleness) {
  auto h = small_hp(4);
  h.epochs = 3;
  h.batch = 2;
  h.k_update = 10;
  const auto d = data(4, 10, 2);
  const auto r = train(h, d, env(), make_mapping(4, 1));
  EXPECT_EQ(r.agent.gradient_steps, 15);
  ASSERT_EQ(r.metrics.rows.size(), 3u);

  auto h2 = h;
  h2.epochs = 2;
  const auto r2 = train(h2, d, env(), make_mapping(4, 1));
  for (std::size_t k = 0; k < r.agent.target.parameters().size(); ++k) {
    EXPECT_EQ(r.agent.target.parameters()[k].values, r2.agent.online.parameters()[k].values) << k;
    EXPECT_NE(r.agent.online.parameters()[k].values, r2.agent.online.parameters()[k].values) << k;
  }
}

TEST(Train, DeterministicPerSeed) {
  const auto h = small_hp(9);
  const auto d = data(4, 12, 2);
  const auto a = train(h, d, env(), make_mapping(4, 1));
  const auto b = train(h, d, env(), make_mapping(4, 1));
  ASSERT_EQ(a.metrics.rows.size(), b.metrics.rows.size());
  for (std::size_t i = 0; i < a.metrics.rows.size(); ++i) {
    EXPECT_EQ(a.metrics.rows[i].l_tot, b.metrics.rows[i].l_tot);
    EXPECT_EQ(a.metrics.rows[i].eval_success_rate, b.metrics.rows[i].eval_success_rate);
  }
  for (std::size_t k = 0; k < a.agent.online.parameters().size(); ++k)
    EXPECT_EQ(a.agent.online.parameters()[k].values, b.agent.online.parameters()[k].values);
}

TEST(GreedyPolicy, HistoryMatchesEncodePrefix) {
  const auto a = make_agent(small_hp(6));
  const auto e = env();
  const auto mapping = make_mapping(4, 1);
  GreedyAgentPolicy policy(a, e);
  Rng rng = make_rng(1);
  const auto traj = rollout(e, mapping, 2, [&](const EpisodeState& s, std::span<const Transition> h, Rng& r) {
    const Action act = policy(s, h, r);
    EXPECT_EQ(policy.hidden(), encode_prefix(a.online, h));
    return act;
  }, rng);
  EXPECT_FALSE(traj.transitions.empty());
}
