#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "dail/dataset.hpp"
#include "dail/errors.hpp"
#include "dail/network.hpp"
#include "dail/tensor.hpp"

// Trajectory-instruction alignment: trajectory embeddings from the shared sequence
// encoder, instruction embeddings from the table, cosine similarity and the binary
// NCE objective.

namespace dail {

/// Histories x_0 .. x_T for one trajectory on a tape; x_0 is the zero vector.
inline std::vector<Var> encode_histories(Tape& t, PolicyNetwork& net, std::span<const Transition> transitions) {
  std::vector<Var> hs;
  hs.reserve(transitions.size() + 1);
  hs.push_back(net.zero_history(t));
  for (const Transition& tr : transitions) hs.push_back(net.advance(t, hs.back(), tr));
  return hs;
}

inline Var encode_prefix(Tape& t, PolicyNetwork& net, std::span<const Transition> prefix) {
  return encode_histories(t, net, prefix).back();
}

inline std::vector<double> encode_prefix(const PolicyNetwork& net, std::span<const Transition> prefix) {
  Tape t(false);
  return t.value(encode_prefix(t, const_cast<PolicyNetwork&>(net), prefix));
}

inline Var encode_instruction(Tape& t, PolicyNetwork& net, int instruction_id) {
  return net.instruction(t, instruction_id);
}

inline std::vector<double> encode_instruction(const PolicyNetwork& net, int instruction_id) {
  return net.instruction_embedding(instruction_id);
}

/// Cosine similarity; throws DegenerateEmbedding on a zero vector.
inline double similarity(std::span<const double> x_tau, std::span<const double> x_l) {
  if (x_tau.size() != x_l.size()) throw ShapeError("similarity: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < x_tau.size(); ++i) {
    ab += x_tau[i] * x_l[i];
    aa += x_tau[i] * x_tau[i];
    bb += x_l[i] * x_l[i];
  }
  if (aa == 0.0 || bb == 0.0) throw DegenerateEmbedding("similarity of a zero-norm embedding");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

/// Binary NCE over a batch. For every trajectory i and every batch entry j whose
/// instruction id differs from i's, one pair term
///   -[ log s(f(tau_i, l_i)) + log(1 - s(f(tau_i, l_j))) ]
/// is averaged over all such pairs (s = logistic function).
inline Var nce_loss(Tape& t, std::span<const Var> traj_embs, std::span<const Var> instr_embs,
                    std::span<const int> ids) {
  const std::size_t n = traj_embs.size();
  if (instr_embs.size() != n || ids.size() != n) throw ShapeError("nce_loss: batch arrays differ in length");
  if (n < 2) throw NoNegatives("nce_loss needs a batch of at least two pairs");
  std::vector<Var> terms;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t negatives = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || ids[j] == ids[i]) continue;
      const Var f = cosine(t, traj_embs[i], instr_embs[j]);
      terms.push_back(log_sigmoid(t, scale(t, f, -1.0)));
      ++negatives;
    }
    if (negatives == 0) continue;
    const Var pos = log_sigmoid(t, cosine(t, traj_embs[i], instr_embs[i]));
    terms.push_back(scale(t, pos, static_cast<double>(negatives)));
    pairs += negatives;
  }
  if (pairs == 0) throw NoNegatives("nce_loss: every batch entry shares one instruction id");
  return scale(t, add_scalars(t, terms), -1.0 / static_cast<double>(pairs));
}

/// True when a batch of ids contains at least one negative pair.
inline bool has_negatives(std::span<const int> ids) {
  for (std::size_t i = 1; i < ids.size(); ++i)
    if (ids[i] != ids[0]) return true;
  return false;
}

/// Convenience: full-trajectory embeddings plus instruction lookups, then nce_loss.
inline Var nce_loss(Tape& t, PolicyNetwork& net, std::span<const Trajectory* const> batch) {
  std::vector<Var> traj, instr;
  std::vector<int> ids;
  for (const Trajectory* tr : batch) {
    traj.push_back(encode_prefix(t, net, tr->transitions));
    instr.push_back(net.instruction(t, tr->instruction_id));
    ids.push_back(tr->instruction_id);
  }
  return nce_loss(t, traj, instr, ids);
}

/// Mean logistic similarity of each trajectory with its own instruction (positive)
/// and with every other instruction id in the table (negative).
struct PairScores {
  double positive = 0.0;
  double negative = 0.0;
};

inline PairScores pair_scores(const PolicyNetwork& net, const OfflineDataset& data) {
  const auto n_ids = static_cast<int>(net.dims().num_instructions);
  std::vector<std::vector<double>> table;
  for (int id = 0; id < n_ids; ++id) table.push_back(encode_instruction(net, id));
  const auto sigma = [](double f) { return 1.0 / (1.0 + std::exp(-f)); };
  PairScores s;
  std::size_t n_pos = 0, n_neg = 0;
  for (const Trajectory& tr : data.trajectories) {
    const auto x = encode_prefix(net, tr.transitions);
    for (int id = 0; id < n_ids; ++id) {
      const double p = sigma(similarity(x, table[static_cast<std::size_t>(id)]));
      if (id == tr.instruction_id) {
        s.positive += p;
        ++n_pos;
      } else {
        s.negative += p;
        ++n_neg;
      }
    }
  }
  if (n_pos > 0) s.positive /= static_cast<double>(n_pos);
  if (n_neg > 0) s.negative /= static_cast<double>(n_neg);
  return s;
}

struct AlignmentRunSettings {
  int num_instructions = 64;
  std::size_t n_train = 1024;
  std::size_t n_heldout = 256;
  std::size_t epochs = 30;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t feature = 64;
  std::uint64_t seed = 0;
};

struct AlignmentRunResult {
  std::vector<double> epoch_loss;  // index 0 is the loss before any update
  PairScores heldout;
  PolicyNetwork net;
};

/// Trains only the encoder and instruction table on nce_loss over expert trajectories,
/// then scores a held-out set collected with a different seed under the same mapping.
inline AlignmentRunResult alignment_run(const GridWorld& env, const AlignmentRunSettings& s) {
  if (s.batch < 2) throw InvalidArgument("alignment run needs a batch of at least two");
  const auto mapping = make_mapping(s.num_instructions, derive_seed(s.seed, 0x6d));
  const auto train = collect_mixed(env, mapping, s.n_train, 1.0, derive_seed(s.seed, 0x74));
  const auto held = collect_mixed(env, mapping, s.n_heldout, 1.0, derive_seed(s.seed, 0x68));
  NetworkDims dims;
  dims.obs_dim = env.config().observation_size();
  dims.num_instructions = static_cast<std::size_t>(s.num_instructions);
  dims.feature = s.feature;
  AlignmentRunResult out{{}, {}, PolicyNetwork(dims, derive_seed(s.seed, 1))};
  const AdamConfig adam{s.lr, 0.9, 0.999, 1e-8};

  std::vector<std::size_t> order(train.trajectories.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batches = [&] {
    std::vector<std::vector<const Trajectory*>> bs;
    for (std::size_t start = 0; start < order.size(); start += s.batch) {
      std::vector<const Trajectory*> b;
      for (std::size_t i = start; i < std::min(order.size(), start + s.batch); ++i)
        b.push_back(&train.trajectories[order[i]]);
      std::vector<int> ids;
      for (const Trajectory* t : b) ids.push_back(t->instruction_id);
      if (b.size() >= 2 && has_negatives(ids)) bs.push_back(std::move(b));
    }
    return bs;
  };

  double initial = 0.0;
  const auto first = batches();
  for (const auto& b : first) {
    Tape t(false);
    initial += t.scalar(nce_loss(t, out.net, b));
  }
  out.epoch_loss.push_back(initial / static_cast<double>(first.size()));

  Rng rng = make_rng(s.seed, 2);
  long step = 0;
  for (std::size_t epoch = 0; epoch < s.epochs; ++epoch) {
    shuffle(order, rng);
    double sum = 0.0;
    const auto bs = batches();
    for (const auto& b : bs) {
      Tape t;
      const Var loss = nce_loss(t, out.net, b);
      sum += t.scalar(loss);
      t.backward(loss);
      adam_step(out.net.parameters(), adam, ++step);
    }
    out.epoch_loss.push_back(sum / static_cast<double>(bs.size()));
  }
  out.heldout = pair_scores(out.net, held);
  return out;
}

}  // namespace dail
