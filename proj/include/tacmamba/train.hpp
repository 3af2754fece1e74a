#pragma once

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tacmamba/encoder.hpp"
#include "tacmamba/params.hpp"
#include "tacmamba/phase.hpp"
#include "tacmamba/sim.hpp"
#include "tacmamba/tape.hpp"

// Training machinery: the parameter-store/tape bridge, Adam, the ternary
// temporal discriminator, stage-1 self-supervised pretraining and stage-2
// frozen-encoder fine-tuning of the planner stub.

namespace tacmamba {

// -- optimizer ---------------------------------------------------------------

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

template <typename R>
struct AdamState {
  std::vector<R> m, v;
  std::int64_t step = 0;
  explicit AdamState(std::size_t n) : m(n, R(0)), v(n, R(0)) {}
};

// Bias-corrected moment update. Parameters whose trainable flag is cleared
// are left bit-identical no matter what their gradient says.
template <typename R>
void adam_update(ParamStore<R>& ps, const std::vector<R>& grads, AdamState<R>& st,
                 const AdamConfig& cfg) {
  if (grads.size() != ps.size() || st.m.size() != ps.size())
    throw ShapeError("adam_update: gradient/moment size mismatch");
  ++st.step;
  const R b1 = static_cast<R>(cfg.beta1), b2 = static_cast<R>(cfg.beta2);
  const R bc1 = R(1) - std::pow(b1, static_cast<R>(st.step));
  const R bc2 = R(1) - std::pow(b2, static_cast<R>(st.step));
  auto& w = ps.values();
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (!ps.trainable_at(i)) continue;
    const R g = grads[i];
    st.m[i] = b1 * st.m[i] + (R(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (R(1) - b2) * g * g;
    const R mhat = st.m[i] / bc1;
    const R vhat = st.v[i] / bc2;
    w[i] -= static_cast<R>(cfg.lr) * mhat / (std::sqrt(vhat) + static_cast<R>(cfg.eps));
  }
}

// -- store <-> tape bridge ----------------------------------------------------

// Binds parameter views as tape leaves (trainable) or constants (frozen) and
// routes leaf gradients back to a flat gradient buffer congruent with the
// store.
template <typename R>
class StoreBinding {
 public:
  StoreBinding(Tape<R>& tape, const ParamStore<R>& store) : tape_(&tape), store_(&store) {}

  // Whole view as one node.
  int node(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    const auto& v = store_->view(name);
    Tensor<R> t(v.shape);
    const R* src = store_->values().data() + v.offset;
    std::copy(src, src + v.numel, t.v.begin());
    int id;
    if (store_->trainable_at(v.offset)) {
      id = tape_->leaf(std::move(t));
      bound_.push_back({id, v.offset, v.numel});
    } else {
      id = tape_->constant(std::move(t));
    }
    cache_.emplace(name, id);
    return id;
  }

  // One element of a view as a scalar node.
  int scalar_node(const std::string& name, std::size_t index) {
    std::string key = name + "#" + std::to_string(index);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    const auto& v = store_->view(name);
    if (index >= v.numel) throw ShapeError("scalar_node: index out of range for " + name);
    Tensor<R> t({1});
    t.v[0] = store_->values()[v.offset + index];
    int id;
    if (store_->trainable_at(v.offset + index)) {
      id = tape_->leaf(std::move(t));
      bound_.push_back({id, v.offset + index, 1});
    } else {
      id = tape_->constant(std::move(t));
    }
    cache_.emplace(key, id);
    return id;
  }

  // Accumulates leaf gradients into `flat` (sized like the store).
  void accumulate_grads(std::vector<R>& flat) {
    if (flat.size() != store_->size()) throw ShapeError("accumulate_grads: buffer size");
    for (const auto& b : bound_) {
      const auto& g = tape_->grad(b.node).v;
      for (std::size_t i = 0; i < b.numel; ++i) flat[b.offset + i] += g[i];
    }
  }

 private:
  struct Bound {
    int node;
    std::size_t offset;
    std::size_t numel;
  };
  Tape<R>* tape_;
  const ParamStore<R>* store_;
  std::map<std::string, int> cache_;
  std::vector<Bound> bound_;
};

// -- differentiable encoder forward -------------------------------------------

// Full-sequence encoder graph; returns the (T x d_model*channels) node.
// Normalization statistics depend only on the input, so they enter the graph
// as constants; the learned affine, lift and blocks are recorded ops.
template <typename R>
int build_encoder_h_seq(Tape<R>& tp, StoreBinding<R>& bind, const EncoderConfig& cfg,
                        std::span<const float> x_seq, std::int64_t T) {
  if (static_cast<std::int64_t>(x_seq.size()) != T * cfg.channels)
    throw ShapeError("build_encoder_h_seq: sequence size");
  int h_all = -1;
  for (int ch = 0; ch < cfg.channels; ++ch) {
    Tensor<R> base({T});
    RevinChannelState<R> r;
    for (std::int64_t t = 0; t < T; ++t) {
      R x = static_cast<R>(x_seq[t * cfg.channels + ch]);
      revin_update(r, x, static_cast<R>(cfg.revin_alpha));
      base.v[t] = (x - r.mean) / std::sqrt(r.var + static_cast<R>(kRevinEps));
    }
    int xn = tp.scale_shift(tp.constant(std::move(base)),
                            bind.scalar_node("encoder/revin/gamma", static_cast<std::size_t>(ch)),
                            bind.scalar_node("encoder/revin/beta", static_cast<std::size_t>(ch)));
    int x = tp.embed_scalar(xn, bind.node("encoder/embed/w"), bind.node("encoder/embed/b"));
    const int I = cfg.d_inner();
    for (int l = 0; l < cfg.layers; ++l) {
      const std::string p = block_prefix(l);
      int xz = tp.linear(x, bind.node(p + "w_in"), bind.node(p + "b_in"));
      int u_pre = tp.slice_cols(xz, 0, I);
      int gate = tp.slice_cols(xz, I, 2 * I);
      int u = tp.silu_op(tp.conv_dw(u_pre, bind.node(p + "w_conv"), bind.node(p + "b_conv")));
      int dlt = tp.softplus_op(tp.linear(u, bind.node(p + "w_delta"), bind.node(p + "b_delta")));
      int bm = tp.linear(u, bind.node(p + "w_b"));
      int cm = tp.linear(u, bind.node(p + "w_c"));
      int y = tp.ssm_scan(u, dlt, bm, cm, bind.node(p + "a_log"), bind.node(p + "d_skip"));
      int gated = tp.mul(y, tp.silu_op(gate));
      x = tp.add(tp.linear(gated, bind.node(p + "w_out"), bind.node(p + "b_out")), x);
    }
    h_all = (h_all < 0) ? x : tp.concat_cols(h_all, x);
  }
  return h_all;
}

// -- discriminator -------------------------------------------------------------

inline constexpr int kDiscrHidden = 128;

template <typename R>
void add_discriminator_params(ParamStore<R>& ps, int feature_dim) {
  ps.add("discr/w1", {kDiscrHidden, 2 * static_cast<std::int64_t>(feature_dim)});
  ps.add("discr/b1", {kDiscrHidden});
  ps.add("discr/w2", {3, kDiscrHidden});
  ps.add("discr/b2", {3});
}

template <typename R>
void init_discriminator_params(ParamStore<R>& ps, int feature_dim, std::mt19937& rng) {
  fill_kaiming_uniform(ps.span("discr/w1"), rng, 2 * feature_dim);
  for (auto& b : ps.span("discr/b1")) b = R(0);
  // near-zero head so the initial loss sits at the maximum-entropy point
  fill_uniform(ps.span("discr/w2"), rng, -0.01, 0.01);
  for (auto& b : ps.span("discr/b2")) b = R(0);
}

// Graph from gathered pair features to the 3-way logits node.
template <typename R>
int build_discriminator_logits(Tape<R>& tp, StoreBinding<R>& bind, int h_i, int h_j) {
  int hcat = tp.concat_cols(h_i, h_j);
  int a1 = tp.silu_op(tp.linear(hcat, bind.node("discr/w1"), bind.node("discr/b1")));
  return tp.linear(a1, bind.node("discr/w2"), bind.node("discr/b2"));
}

// Plain (non-recorded) forward for evaluation.
std::vector<float> discriminator_forward(std::span<const float> h_i, std::span<const float> h_j,
                                         const ParamStore<float>& ps);

// -- generic sequence feature model ---------------------------------------------

// Anything that can turn a (T x C) force sequence into per-step features and
// be trained through the tape. The tactile encoder and the recurrent baseline
// both implement this so the ternary task can compare them.
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;
  virtual int feature_dim() const = 0;
  virtual int channels() const = 0;
  virtual void add_params(ParamStore<float>& ps) const = 0;
  virtual void init_params(ParamStore<float>& ps) const = 0;
  virtual int build_h_seq(Tape<float>& tp, StoreBinding<float>& bind, std::span<const float> x_seq,
                          std::int64_t T) const = 0;
  virtual std::vector<float> encode_plain(std::span<const float> x_seq, std::int64_t T,
                                          const ParamStore<float>& ps) const = 0;
};

// The tactile encoder as a SequenceModel.
class TacmambaModel : public SequenceModel {
 public:
  explicit TacmambaModel(const EncoderConfig& cfg) : cfg_(cfg) {}
  int feature_dim() const override { return cfg_.h_dim(); }
  int channels() const override { return cfg_.channels; }
  void add_params(ParamStore<float>& ps) const override { add_encoder_params(ps, cfg_); }
  void init_params(ParamStore<float>& ps) const override { init_encoder_params(ps, cfg_); }
  int build_h_seq(Tape<float>& tp, StoreBinding<float>& bind, std::span<const float> x_seq,
                  std::int64_t T) const override {
    return build_encoder_h_seq(tp, bind, cfg_, x_seq, T);
  }
  std::vector<float> encode_plain(std::span<const float> x_seq, std::int64_t T,
                                  const ParamStore<float>& ps) const override {
    return encoder_encode(x_seq, T, ps, cfg_, true);
  }
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
};

// -- metrics -------------------------------------------------------------------

struct MetricsLog {
  std::vector<std::string> lines;  // one JSON object per line
  void write_jsonl(const std::string& path) const;
};

// -- stage 1: ternary temporal discrimination -----------------------------------

struct Stage1Config {
  int max_steps = 2000;
  int batch_pairs = 63;  // must be a multiple of 3
  int eval_every = 50;
  int eval_pairs_per_traj = 150;
  double early_stop_acc = 2.0;  // disabled unless <= 1
  int holdout_every = 5;        // every holdout_every-th trajectory is held out
  AdamConfig adam;
  std::uint64_t seed = 1;
};

struct Stage1Result {
  ParamStore<float> store;  // model + discriminator parameters
  MetricsLog metrics;
  float initial_loss = 0.0f;
  double best_holdout_acc = 0.0;
  int steps_run = 0;
};

// Convenience scalar loss (recorded graph under the hood); used by tests.
float loss_pre(const std::vector<float>& x_seq, std::int64_t T, const std::vector<PairSample>& pairs,
               const SequenceModel& model, const ParamStore<float>& store);

Stage1Result pretrain_stage1(const std::vector<LabeledTrajectory>& trajectories,
                             const SequenceModel& model, const Stage1Config& cfg);

// Held-out ternary accuracy of a trained store over the given trajectories.
double ternary_accuracy(const std::vector<LabeledTrajectory>& trajectories,
                        const SequenceModel& model, const ParamStore<float>& store,
                        int pairs_per_traj, std::uint64_t seed);

// -- stage 2: frozen-encoder planner fine-tuning ---------------------------------

enum class SamplerKind { uniform, phase_uniform };
inline const char* to_string(SamplerKind k) {
  return k == SamplerKind::uniform ? "uniform" : "phase-uniform";
}

// Precomputed per-trajectory features for the planner stub. The frozen
// encoder is applied once; fine-tuning then never touches it.
struct Stage2Features {
  std::int64_t T = 0;
  int d_z = 0;
  int coarse_dim = 0;
  std::vector<float> z;        // (T x d_z)
  std::vector<float> coarse;   // (T x coarse_dim): per-channel mean/max over the last full second
  std::vector<int> phase_label;  // ground-truth PhaseKind index per step
  std::vector<int> count_label;  // events completed by step t
  Segmentation seg;              // automatic segmentation (drives phase-uniform sampling)
};

Stage2Features stage2_features(const LabeledTrajectory& traj, const ParamStore<float>& encoder_store,
                               const EncoderConfig& cfg);

struct Stage2Config {
  SamplerKind sampler = SamplerKind::phase_uniform;
  int max_steps = 4000;
  int batch = 64;
  int eval_every = 25;
  int count_classes = 0;  // > 0 enables the event-count head
  AdamConfig adam;
  std::uint64_t seed = 1;
  double stop_at_critical_acc = 2.0;  // disabled unless <= 1
};

struct Stage2Result {
  ParamStore<float> store;  // frozen encoder + trained planner head
  MetricsLog metrics;
  // evaluation curve: (step, critical-phase accuracy on held-out data)
  std::vector<std::pair<int, double>> critical_curve;
  int steps_run = 0;

  // First step at which held-out critical accuracy reached `acc`, or -1.
  int first_step_reaching(double acc) const {
    for (const auto& [s, a] : critical_curve)
      if (a >= acc) return s;
    return -1;
  }
};

Stage2Result finetune_stage2(const std::vector<Stage2Features>& train_set,
                             const std::vector<Stage2Features>& holdout_set,
                             const ParamStore<float>& encoder_store, const EncoderConfig& enc_cfg,
                             const Stage2Config& cfg);

// Planner stub forward: logits = W [z | coarse] + b. The first
// kPhaseKindCount logits are phase classes, any remainder is the event-count
// head.
std::vector<float> planner_forward(std::span<const float> z, std::span<const float> coarse,
                                   const ParamStore<float>& ps);

template <typename R>
void add_planner_params(ParamStore<R>& ps, int in_dim, int out_dim) {
  ps.add("planner/w", {out_dim, in_dim});
  ps.add("planner/b", {out_dim});
}

template <typename R>
void init_planner_params(ParamStore<R>& ps, std::mt19937& rng) {
  fill_uniform(ps.span("planner/w"), rng, -0.01, 0.01);
  for (auto& b : ps.span("planner/b")) b = R(0);
}

}  // namespace tacmamba
