#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dail/dataset.hpp"
#include "dail/errors.hpp"
#include "dail/gridworld.hpp"
#include "dail/rng.hpp"

namespace dail {

inline constexpr int kDefaultEvalEpisodes = 100;

/// Greedy success rate over n_episodes. Episode k runs instruction k mod |L| with its
/// own PRNG stream derived from (seed, k), so the result does not depend on the order
/// in which episodes are executed.
inline double evaluate(const Policy& policy, const GridWorld& env, const InstructionMapping& mapping,
                       int n_episodes = kDefaultEvalEpisodes, std::uint64_t seed = 0) {
  if (n_episodes < 1) throw InvalidArgument("n_episodes must be >= 1");
  int successes = 0;
  for (int k = 0; k < n_episodes; ++k) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(k));
    const int id = k % mapping.num_instructions();
    successes += rollout(env, mapping, id, policy, rng).success;
  }
  return static_cast<double>(successes) / n_episodes;
}

struct EpochMetrics {
  int epoch = 0;
  double l_dist = 0.0;
  double l_c = 0.0;
  double l_cql = 0.0;
  double l_tot = 0.0;
  double eval_success_rate = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> rows;
  double final_success = NAN;
  double silhouette = NAN;
};

inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline constexpr const char* kMetricsHeader = "epoch,l_dist,l_c,l_cql,l_tot,eval_success_rate";

inline void write_metrics_csv(const RunMetrics& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kMetricsHeader << '\n';
  for (const auto& r : m.rows)
    out << r.epoch << ',' << format_real(r.l_dist) << ',' << format_real(r.l_c) << ',' << format_real(r.l_cql)
        << ',' << format_real(r.l_tot) << ',' << format_real(r.eval_success_rate) << '\n';
}

}  // namespace dail
