#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dail/dataset.hpp"
#include "dail/gridworld.hpp"
#include "dail/rng.hpp"
#include "dail/tensor.hpp"

namespace dail {

struct NetworkDims {
  std::size_t obs_dim = 0;
  std::size_t num_instructions = 1;
  std::size_t feature = 64;  // obs / instruction / pair / history width
  std::size_t hidden = 64;   // head hidden layer
  std::size_t atoms = 51;
  std::size_t actions = kNumActions;
  double head_init_scale = 1.0;  // multiplies the output layer's init range; 0 gives uniform atoms

  friend bool operator==(const NetworkDims&, const NetworkDims&) = default;
};

/// Observation encoder, instruction table, state-action encoder u_w, recurrent
/// history cell h_w and the distributional head producing |A| x M logits.
///
/// Parameters are held by value; copying a network yields an independent snapshot.
/// Inference helpers run on gradient-free tapes and never write to the parameters.
class PolicyNetwork {
 public:
  enum Slot : std::size_t {
    kObsW, kObsB, kInstr, kPairW, kPairB, kCellWh, kCellWx, kCellB, kHeadW1, kHeadB1, kHeadW2, kHeadB2, kNumSlots
  };

  PolicyNetwork() = default;

  PolicyNetwork(const NetworkDims& dims, std::uint64_t seed) : dims_(dims) {
    if (dims.obs_dim == 0 || dims.num_instructions == 0 || dims.feature == 0 || dims.hidden == 0 ||
        dims.atoms < 2 || dims.actions == 0)
      throw InvalidArgument("network dimensions must be positive");
    const std::size_t f = dims.feature;
    params_.reserve(kNumSlots);
    params_.emplace_back("obs.w", f, dims.obs_dim);
    params_.emplace_back("obs.b", f, 1);
    params_.emplace_back("instr.table", dims.num_instructions, f);
    params_.emplace_back("pair.w", f, dims.obs_dim + dims.actions);
    params_.emplace_back("pair.b", f, 1);
    params_.emplace_back("cell.w_h", f, f);
    params_.emplace_back("cell.w_x", f, f);
    params_.emplace_back("cell.b", f, 1);
    params_.emplace_back("head.w1", dims.hidden, 3 * f);
    params_.emplace_back("head.b1", dims.hidden, 1);
    params_.emplace_back("head.w2", dims.actions * dims.atoms, dims.hidden);
    params_.emplace_back("head.b2", dims.actions * dims.atoms, 1);

    Rng rng = make_rng(seed, 0x696e6974);  // "init"
    const auto fan_in_uniform = [&rng](Parameter& p, std::size_t fan_in) {
      init_uniform(p, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
    };
    fan_in_uniform(params_[kObsW], dims.obs_dim);
    fan_in_uniform(params_[kObsB], dims.obs_dim);
    init_normal(params_[kInstr], rng, 0.02);
    fan_in_uniform(params_[kPairW], dims.obs_dim + dims.actions);
    fan_in_uniform(params_[kPairB], dims.obs_dim + dims.actions);
    init_uniform(params_[kCellWh], rng, 0.5 / std::sqrt(static_cast<double>(f)));
    fan_in_uniform(params_[kCellWx], f);
    fan_in_uniform(params_[kCellB], f);
    fan_in_uniform(params_[kHeadW1], 3 * f);
    fan_in_uniform(params_[kHeadB1], 3 * f);
    init_uniform(params_[kHeadW2], rng, dims.head_init_scale / std::sqrt(static_cast<double>(dims.hidden)));
    init_uniform(params_[kHeadB2], rng, dims.head_init_scale / std::sqrt(static_cast<double>(dims.hidden)));
  }

  const NetworkDims& dims() const { return dims_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter& param(Slot s) { return params_[s]; }
  const Parameter& param(Slot s) const { return params_[s]; }

  /// Copies parameter values only (optimizer moments are left untouched).
  void copy_values_from(const PolicyNetwork& other) {
    if (!(other.dims_ == dims_)) throw ShapeError("copy between networks of different shape");
    for (std::size_t k = 0; k < params_.size(); ++k) params_[k].values = other.params_[k].values;
  }

  // --- tape-level building blocks -------------------------------------------

  Var encode_obs(Tape& t, const Observation& obs) {
    check_obs(obs);
    return relu(t, dense(t, params_[kObsW], params_[kObsB], t.constant(obs.to_vector())));
  }

  Var instruction(Tape& t, int id) {
    if (id < 0) throw IndexError("negative instruction id");
    return embed(t, params_[kInstr], static_cast<std::size_t>(id));
  }

  /// u_w(s, a)
  Var pair(Tape& t, const Observation& obs, Action a) {
    check_obs(obs);
    std::vector<double> in(dims_.obs_dim + dims_.actions, 0.0);
    in[obs.index] = 1.0;
    in[dims_.obs_dim + static_cast<std::size_t>(to_index(a))] = 1.0;
    return relu(t, dense(t, params_[kPairW], params_[kPairB], t.constant(std::move(in))));
  }

  Var zero_history(Tape& t) const { return t.constant(std::vector<double>(dims_.feature, 0.0)); }

  /// x_t = h_w(x_{t-1}, u_w(s_t, a_t))
  Var advance(Tape& t, Var history, const Transition& tr) {
    const Var u = pair(t, tr.obs, tr.action);
    return rnn_step(t, RnnCell{&params_[kCellWh], &params_[kCellWx], &params_[kCellB]}, history, u);
  }

  /// |A| * M logits, action-major.
  Var logits(Tape& t, Var obs_emb, Var instr_emb, Var history) {
    const Var in = concat(t, {obs_emb, instr_emb, history});
    const Var hidden = relu(t, dense(t, params_[kHeadW1], params_[kHeadB1], in));
    return dense(t, params_[kHeadW2], params_[kHeadB2], hidden);
  }

  Var action_logits(Tape& t, Var all_logits, std::size_t action) const {
    return slice(t, all_logits, action * dims_.atoms, dims_.atoms);
  }

  // --- inference (gradient-free) --------------------------------------------

  std::vector<double> advance_history(std::span<const double> history, const Transition& tr) const {
    Tape t(false);
    auto& self = const_cast<PolicyNetwork&>(*this);
    const Var h = t.constant(std::vector<double>(history.begin(), history.end()));
    return t.value(self.advance(t, h, tr));
  }

  std::vector<double> instruction_embedding(int id) const {
    Tape t(false);
    return t.value(const_cast<PolicyNetwork&>(*this).instruction(t, id));
  }

  std::vector<double> forward_logits(const Observation& obs, int instruction_id, std::span<const double> history) const {
    if (history.size() != dims_.feature) throw ShapeError("history length does not match feature size");
    Tape t(false);
    auto& self = const_cast<PolicyNetwork&>(*this);
    const Var h = t.constant(std::vector<double>(history.begin(), history.end()));
    return t.value(self.logits(t, self.encode_obs(t, obs), self.instruction(t, instruction_id), h));
  }

 private:
  void check_obs(const Observation& obs) const {
    if (obs.size != dims_.obs_dim || obs.index >= dims_.obs_dim)
      throw ShapeError("observation does not match network input size");
  }

  NetworkDims dims_;
  std::vector<Parameter> params_;
};

}  // namespace dail
