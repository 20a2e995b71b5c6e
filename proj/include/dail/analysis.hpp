#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dail/agent.hpp"
#include "dail/alignment.hpp"
#include "dail/dataset.hpp"
#include "dail/distributional.hpp"
#include "dail/errors.hpp"
#include "dail/evaluation.hpp"
#include "dail/gridworld.hpp"
#include "dail/rng.hpp"

namespace dail {

struct AnalysisThresholds {
  double delta = 0.1;    // mean-gap threshold
  double d = 0.1;        // Wasserstein threshold
  double eta = 0.05;     // confidence budget
  double epsilon = 0.05; // sub-optimality gap, recorded only

  void validate() const {
    if (!(delta > 0.0)) throw InvalidArgument("delta must be > 0");
    if (!(d > 0.0)) throw InvalidArgument("d must be > 0");
    if (!(eta > 0.0 && eta < 1.0)) throw InvalidArgument("eta must lie in (0, 1)");
    if (!(epsilon >= 0.0)) throw InvalidArgument("epsilon must be >= 0");
  }
};

enum class Verdict { Same, Different, Inconclusive };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::Same: return "same";
    case Verdict::Different: return "different";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "?";
}

inline Verdict verdict(double gap, double threshold) {
  if (gap >= threshold) return Verdict::Different;
  if (gap <= threshold / 2.0) return Verdict::Same;
  return Verdict::Inconclusive;
}

using Matrix = std::vector<std::vector<double>>;

struct DisambiguationReport {
  int num_instructions = 0;
  int n_states = 0;
  AnalysisThresholds thresholds;
  Matrix mean_gap;
  Matrix w1_gap;

  Verdict mean_verdict(int i, int j) const { return i == j ? Verdict::Same : verdict(mean_gap[i][j], thresholds.delta); }
  Verdict w1_verdict(int i, int j) const { return i == j ? Verdict::Same : verdict(w1_gap[i][j], thresholds.d); }
};

/// One sampled (state, history) point from a greedy rollout.
struct StateSample {
  Observation obs;
  std::vector<double> history;
};

/// Greedy rollouts under uniformly drawn instructions; from sample k's rollout (PRNG
/// stream (seed, k)) one timestep is drawn uniformly and its state and history kept.
inline std::vector<StateSample> sample_states(const TrainedAgent& agent, const GridWorld& env,
                                              const InstructionMapping& mapping, int n_states, std::uint64_t seed) {
  std::vector<StateSample> out;
  out.reserve(static_cast<std::size_t>(n_states));
  for (int k = 0; k < n_states; ++k) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(k));
    const int id = static_cast<int>(uniform_below(rng, static_cast<std::uint64_t>(mapping.num_instructions())));
    const Trajectory traj = rollout(env, mapping, id, greedy_policy(agent, env), rng);
    const std::size_t t = uniform_below(rng, traj.transitions.size());
    std::vector<double> h(agent.online.dims().feature, 0.0);
    for (std::size_t i = 0; i < t; ++i) h = agent.online.advance_history(h, traj.transitions[i]);
    out.push_back({traj.transitions[t].obs, std::move(h)});
  }
  return out;
}

/// Estimates, over states visited by the learned greedy policy, the expected mean-value
/// gap and W1 gap between every pair of instructions. For the ordered pair (i, j) the
/// action is the greedy one for l_i; the reported matrices average both directions.
inline DisambiguationReport disambiguation_report(const TrainedAgent& agent, const GridWorld& env,
                                                  const InstructionMapping& mapping,
                                                  const AnalysisThresholds& thresholds, int n_states = 200,
                                                  std::uint64_t seed = 0) {
  thresholds.validate();
  if (n_states < 1) throw InvalidArgument("n_states must be >= 1");
  if (agent.gradient_steps == 0) throw InvalidArgument("disambiguation_report needs a trained agent");
  if (agent.num_instructions != mapping.num_instructions() ||
      agent.online.dims().num_instructions != static_cast<std::size_t>(mapping.num_instructions()))
    throw InvalidArgument("agent and mapping disagree on the number of instructions");
  if (agent.online.dims().obs_dim != env.config().observation_size())
    throw InvalidArgument("agent observation size does not match the environment");

  const auto n = static_cast<std::size_t>(mapping.num_instructions());
  Matrix mean_dir(n, std::vector<double>(n, 0.0));
  Matrix w1_dir(n, std::vector<double>(n, 0.0));
  const auto samples = sample_states(agent, env, mapping, n_states, seed);
  for (const StateSample& s : samples) {
    std::vector<std::vector<CategoricalDistribution>> dists(n);
    std::vector<std::vector<double>> qs(n);
    for (std::size_t l = 0; l < n; ++l) {
      dists[l] = forward(agent.online, s.obs, static_cast<int>(l), s.history);
      qs[l] = q_values(dists[l], agent.support);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t a = greedy_index(qs[i]);
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        mean_dir[i][j] += std::abs(qs[i][a] - qs[j][a]);
        w1_dir[i][j] += wasserstein1(dists[i][a].probs, dists[j][a].probs, agent.support);
      }
    }
  }
  DisambiguationReport rep;
  rep.num_instructions = static_cast<int>(n);
  rep.n_states = n_states;
  rep.thresholds = thresholds;
  rep.mean_gap.assign(n, std::vector<double>(n, 0.0));
  rep.w1_gap.assign(n, std::vector<double>(n, 0.0));
  const double inv = 1.0 / static_cast<double>(n_states);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (mean_dir[i][j] + mean_dir[j][i]) * inv;
      const double w = 0.5 * (w1_dir[i][j] + w1_dir[j][i]) * inv;
      rep.mean_gap[i][j] = rep.mean_gap[j][i] = m;
      rep.w1_gap[i][j] = rep.w1_gap[j][i] = w;
    }
  return rep;
}

inline constexpr const char* kDisambiguationHeader =
    "i,j,goal_i,goal_j,mean_gap,w1_gap,mean_verdict,w1_verdict";

/// Long-format CSV, one row per ordered pair. The single learned greedy policy stands in
/// for "any shared epsilon-optimal policy"; the header comment says so.
inline void write_disambiguation_csv(const DisambiguationReport& rep, const InstructionMapping& mapping,
                                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "# states=" << rep.n_states << " delta=" << format_real(rep.thresholds.delta)
      << " d=" << format_real(rep.thresholds.d) << " eta=" << format_real(rep.thresholds.eta)
      << " epsilon=" << format_real(rep.thresholds.epsilon)
      << " (unverified: estimated under the learned greedy policy only)\n";
  out << kDisambiguationHeader << '\n';
  for (int i = 0; i < rep.num_instructions; ++i)
    for (int j = 0; j < rep.num_instructions; ++j)
      out << i << ',' << j << ',' << mapping.goal_of(i) << ',' << mapping.goal_of(j) << ','
          << format_real(rep.mean_gap[i][j]) << ',' << format_real(rep.w1_gap[i][j]) << ','
          << to_string(rep.mean_verdict(i, j)) << ',' << to_string(rep.w1_verdict(i, j)) << '\n';
}

// ---------------------------------------------------------------------------
// Monte-Carlo detector comparison.

using Sampler = std::function<double(Rng&)>;

/// Draws values[k] with probability probs[k].
inline Sampler discrete_sampler(std::vector<double> values, std::vector<double> probs) {
  if (values.empty() || values.size() != probs.size()) throw InvalidArgument("discrete_sampler: bad arrays");
  double total = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw InvalidArgument("discrete_sampler: negative probability");
    total += p;
  }
  if (!(total > 0.0)) throw InvalidArgument("discrete_sampler: zero total mass");
  return [values = std::move(values), probs = std::move(probs), total](Rng& rng) {
    double u = uniform01(rng) * total;
    for (std::size_t k = 0; k + 1 < values.size(); ++k) {
      if (u < probs[k]) return values[k];
      u -= probs[k];
    }
    return values.back();
  };
}

/// Mean of |order-statistic differences|; exact W1 between equal-size empirical samples.
inline double empirical_w1(std::vector<double> a, std::vector<double> b) {
  if (a.size() != b.size() || a.empty()) throw InvalidArgument("empirical_w1 needs equal, nonempty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

struct DetectionRates {
  double w1_detect_rate = 0.0;
  double mean_detect_rate = 0.0;
};

/// Per trial (PRNG stream (seed, trial)) draws n_samples returns from each distribution.
/// The mean detector fires when |mean gap| >= delta/2, the W1 detector when the
/// empirical W1 >= d/2.
inline DetectionRates mc_theorem_check(const Sampler& dist_a, const Sampler& dist_b, int n_samples, int n_trials,
                                       const AnalysisThresholds& thresholds, std::uint64_t seed) {
  thresholds.validate();
  if (n_samples < 2) throw InvalidArgument("n_samples must be >= 2");
  if (n_trials < 1) throw InvalidArgument("n_trials must be >= 1");
  int w1_hits = 0, mean_hits = 0;
  std::vector<double> a(static_cast<std::size_t>(n_samples)), b(a.size());
  for (int t = 0; t < n_trials; ++t) {
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(t));
    for (double& x : a) x = dist_a(rng);
    for (double& x : b) x = dist_b(rng);
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    const double gap = std::abs(ma - mb) / static_cast<double>(n_samples);
    mean_hits += gap >= thresholds.delta / 2.0;
    w1_hits += empirical_w1(a, b) >= thresholds.d / 2.0;
  }
  return {static_cast<double>(w1_hits) / n_trials, static_cast<double>(mean_hits) / n_trials};
}

// ---------------------------------------------------------------------------
// Silhouette with cosine distance.

inline double cosine_distance(std::span<const double> a, std::span<const double> b) {
  return 1.0 - similarity(a, b);
}

/// Mean silhouette over all points; points in singleton clusters score 0, as do points
/// whose intra- and nearest-cluster distances are both zero.
inline double silhouette(const std::vector<std::vector<double>>& embeddings, std::span<const int> labels) {
  const std::size_t n = embeddings.size();
  if (labels.size() != n) throw ShapeError("silhouette: embeddings and labels differ in length");
  const std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2) throw InvalidArgument("silhouette needs at least two distinct labels");
  for (const auto& e : embeddings) {
    if (e.size() != embeddings.front().size()) throw ShapeError("silhouette: ragged embeddings");
    if (std::all_of(e.begin(), e.end(), [](double v) { return v == 0.0; }))
      throw DegenerateEmbedding("silhouette of a zero-norm embedding");
  }
  std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist[i][j] = dist[j][i] = std::max(0.0, cosine_distance(embeddings[i], embeddings[j]));

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, std::size_t>> by_label;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      auto& [sum, count] = by_label[labels[j]];
      sum += dist[i][j];
      ++count;
    }
    const auto own = by_label.find(labels[i]);
    if (own == by_label.end()) continue;  // singleton cluster
    const double a = own->second.first / static_cast<double>(own->second.second);
    double b = INFINITY;
    for (const auto& [label, sc] : by_label)
      if (label != labels[i]) b = std::min(b, sc.first / static_cast<double>(sc.second));
    const double m = std::max(a, b);
    if (m > 0.0) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

/// Instruction embeddings labelled by the goal each instruction denotes.
inline double instruction_silhouette(const TrainedAgent& agent, const InstructionMapping& mapping) {
  std::vector<std::vector<double>> embs;
  std::vector<int> labels;
  for (int id = 0; id < mapping.num_instructions(); ++id) {
    embs.push_back(encode_instruction(agent.online, id));
    labels.push_back(mapping.goal_of(id));
  }
  return silhouette(embs, labels);
}

inline constexpr const char* kEmbeddingsHeader = "instruction_id,goal";

inline void write_embeddings_csv(const TrainedAgent& agent, const InstructionMapping& mapping,
                                 const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kEmbeddingsHeader;
  for (std::size_t k = 0; k < agent.online.dims().feature; ++k) out << ",e" << k;
  out << '\n';
  for (int id = 0; id < mapping.num_instructions(); ++id) {
    out << id << ',' << mapping.goal_of(id);
    for (double v : encode_instruction(agent.online, id)) out << ',' << format_real(v);
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Instruction-count ambiguity sweep.

struct Algorithm {
  std::string name;
  bool distributional = true;
  bool alignment = true;
};

inline Algorithm algorithm_by_name(const std::string& name) {
  if (name == "baseline") return {name, false, false};
  if (name == "dail") return {name, true, true};
  if (name == "dist-only") return {name, true, false};
  if (name == "align-only") return {name, false, true};
  throw InvalidArgument("unknown algorithm '" + name + "' (expected baseline, dail, dist-only, align-only)");
}

struct SweepSettings {
  EnvConfig env = default_env_config();
  Hyperparams train;            // seed and ablation flags are set per cell
  double success_ratio = 0.5;
  long grad_steps = 2000;       // per-cell budget; epochs = ceil(grad_steps / batches per epoch)
  int eval_episodes = kDefaultEvalEpisodes;
};

struct SweepCell {
  int count = 1;
  std::string algorithm;
  std::uint64_t seed = 0;
};

struct SweepRow {
  SweepCell cell;
  double success = NAN;
  double silhouette = NAN;
  std::string status = "ok";
};

/// Mapping and dataset depend on (count, seed) only, so every algorithm in a cell group
/// trains on the same data.
inline std::uint64_t cell_mapping_seed(int count, std::uint64_t seed) {
  return derive_seed(seed, 0x6d00 + static_cast<std::uint64_t>(count));
}

inline std::uint64_t cell_data_seed(int count, std::uint64_t seed) {
  return derive_seed(seed, 0x6400 + static_cast<std::uint64_t>(count));
}

inline std::size_t epochs_for_budget(long grad_steps, std::size_t n_traj, std::size_t batch) {
  const std::size_t per_epoch = (n_traj + batch - 1) / batch;
  return std::max<std::size_t>(1, (static_cast<std::size_t>(grad_steps) + per_epoch - 1) / per_epoch);
}

inline Hyperparams cell_hyperparams(const SweepSettings& s, const SweepCell& c, std::size_t n_traj) {
  const Algorithm alg = algorithm_by_name(c.algorithm);
  Hyperparams hp = s.train;
  hp.seed = c.seed;
  hp.distributional = alg.distributional;
  hp.alignment = alg.alignment;
  hp.eval_episodes = s.eval_episodes;
  hp.epochs = epochs_for_budget(s.grad_steps, n_traj, hp.batch);
  return hp;
}

inline SweepRow run_cell(const SweepSettings& s, const SweepCell& c) {
  SweepRow row{c};
  try {
    const GridWorld env(s.env);
    const InstructionMapping mapping = make_mapping(c.count, cell_mapping_seed(c.count, c.seed));
    const OfflineDataset data =
        collect_mixed(env, mapping, toy_dataset_size(c.count), s.success_ratio, cell_data_seed(c.count, c.seed));
    const TrainResult res = train(cell_hyperparams(s, c, data.trajectories.size()), data, env, mapping);
    row.success = res.metrics.final_success;
    std::set<int> goals;
    for (int id = 0; id < mapping.num_instructions(); ++id) goals.insert(mapping.goal_of(id));
    if (goals.size() >= 2) row.silhouette = instruction_silhouette(res.agent, mapping);
  } catch (const std::exception& e) {
    row.status = std::string("failed: ") + e.what();
    std::replace(row.status.begin(), row.status.end(), ',', ';');
    std::replace(row.status.begin(), row.status.end(), '\n', ' ');
  }
  return row;
}

inline bool cell_less(const SweepCell& a, const SweepCell& b) {
  if (a.count != b.count) return a.count < b.count;
  if (a.algorithm != b.algorithm) return a.algorithm < b.algorithm;
  return a.seed < b.seed;
}

inline bool same_cell(const SweepCell& a, const SweepCell& b) {
  return a.count == b.count && a.algorithm == b.algorithm && a.seed == b.seed;
}

inline std::vector<SweepCell> sweep_grid(std::span<const int> counts, std::span<const std::string> algorithms,
                                         std::span<const std::uint64_t> seeds) {
  if (counts.empty()) throw InvalidArgument("sweep needs at least one instruction count");
  if (algorithms.empty()) throw InvalidArgument("sweep needs at least one algorithm");
  if (seeds.empty()) throw InvalidArgument("sweep needs at least one seed");
  std::vector<SweepCell> cells;
  for (int c : counts) {
    if (c < 1) throw InvalidArgument("instruction counts must be >= 1");
    for (const auto& a : algorithms) {
      algorithm_by_name(a);
      for (std::uint64_t s : seeds) cells.push_back({c, a, s});
    }
  }
  std::sort(cells.begin(), cells.end(), cell_less);
  return cells;
}

/// Runs every cell on up to `jobs` worker threads. Rows come back in (count, algorithm,
/// seed) order whatever the scheduling; on_done is called (serialized) as each finishes.
inline std::vector<SweepRow> ambiguity_sweep(const SweepSettings& s, const std::vector<SweepCell>& cells,
                                             unsigned jobs = 1,
                                             const std::function<void(const SweepRow&)>& on_done = {}) {
  std::vector<SweepRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      rows[i] = run_cell(s, cells[i]);
      if (on_done) {
        std::lock_guard lock(mu);
        on_done(rows[i]);
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return cell_less(a.cell, b.cell); });
  return rows;
}

inline constexpr const char* kSweepHeader = "count,algorithm,seed,success,silhouette,status";

inline std::string sweep_row_line(const SweepRow& r) {
  return std::to_string(r.cell.count) + ',' + r.cell.algorithm + ',' + std::to_string(r.cell.seed) + ',' +
         format_real(r.success) + ',' + format_real(r.silhouette) + ',' + r.status;
}

inline void write_sweep_csv(std::vector<SweepRow> rows, const std::string& path) {
  std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return cell_less(a.cell, b.cell); });
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << kSweepHeader << '\n';
  for (const auto& r : rows) out << sweep_row_line(r) << '\n';
}

inline double parse_real(const std::string& s) {
  if (s == "nan") return NAN;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument(s);
  return v;
}

inline std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != kSweepHeader) throw SchemaError(path + ": unexpected sweep header");
  std::vector<SweepRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (int k = 0; k < 5; ++k) {
      const std::size_t comma = line.find(',', start);
      if (comma == std::string::npos) throw ParseError("expected 6 fields", line_no);
      f.push_back(line.substr(start, comma - start));
      start = comma + 1;
    }
    f.push_back(line.substr(start));
    try {
      SweepRow r;
      r.cell.count = std::stoi(f[0]);
      r.cell.algorithm = f[1];
      r.cell.seed = std::stoull(f[2]);
      r.success = parse_real(f[3]);
      r.silhouette = parse_real(f[4]);
      r.status = f[5];
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError("malformed sweep row", line_no);
    }
  }
  return rows;
}

struct SweepSummary {
  int count = 0;
  std::string algorithm;
  double mean_success = NAN;
  double mean_silhouette = NAN;
  int n_ok = 0;
};

/// Per (count, algorithm) means over rows whose status is ok.
inline std::vector<SweepSummary> aggregate(const std::vector<SweepRow>& rows) {
  std::map<std::pair<int, std::string>, std::vector<const SweepRow*>> groups;
  for (const auto& r : rows)
    if (r.status == "ok") groups[{r.cell.count, r.cell.algorithm}].push_back(&r);
  std::vector<SweepSummary> out;
  for (const auto& [key, members] : groups) {
    SweepSummary s{key.first, key.second};
    double succ = 0.0, sil = 0.0;
    int n_sil = 0;
    for (const SweepRow* r : members) {
      succ += r->success;
      if (!std::isnan(r->silhouette)) {
        sil += r->silhouette;
        ++n_sil;
      }
    }
    s.n_ok = static_cast<int>(members.size());
    s.mean_success = succ / s.n_ok;
    if (n_sil > 0) s.mean_silhouette = sil / n_sil;
    out.push_back(s);
  }
  return out;
}

inline std::optional<double> summary_mean(const std::vector<SweepSummary>& sums, int count,
                                          const std::string& algorithm) {
  for (const auto& s : sums)
    if (s.count == count && s.algorithm == algorithm) return s.mean_success;
  return std::nullopt;
}

}  // namespace dail
