#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tacmamba/params.hpp"
#include "tacmamba/ssm.hpp"

// Tactile history compressor: per-channel reversible instance normalization,
// a scalar-to-d_model input lift, a stack of Mamba blocks shared across
// channels, and a linear soft-prompt projection of the concatenated
// last-layer output h_t. Streaming and full-sequence paths run the same
// kernels in the same order, so they agree sample for sample.

namespace tacmamba {

struct EncoderConfig {
  int channels = 1;
  int d_model = 64;
  int n_state = 16;
  int layers = 4;
  int conv_w = 4;
  int d_z = 32;
  float revin_alpha = 0.01f;
  std::uint64_t seed = 0;

  int d_inner() const { return 2 * d_model; }
  int h_dim() const { return d_model * channels; }

  void validate() const {
    if (channels < 1 || d_model < 1 || n_state < 1 || layers < 1 || conv_w < 1 || d_z < 1)
      throw ShapeError("encoder config: all dimensions must be >= 1");
    if (!(revin_alpha > 0.0f && revin_alpha < 1.0f))
      throw ShapeError("encoder config: revin_alpha must lie in (0,1)");
  }
};

inline constexpr float kRevinEps = 1e-5f;

// Per-channel running statistics. The learned affine (gamma, beta) lives in
// the parameter store.
template <typename R>
struct RevinChannelState {
  R mean = R(0);
  R var = R(1);
};

template <typename R>
inline void revin_update(RevinChannelState<R>& s, R x, R alpha) {
  s.mean = (R(1) - alpha) * s.mean + alpha * x;
  R d = x - s.mean;
  s.var = (R(1) - alpha) * s.var + alpha * d * d;
}

template <typename R>
inline R revin_apply(const RevinChannelState<R>& s, R x, R gamma, R beta) {
  return gamma * (x - s.mean) / std::sqrt(s.var + R(kRevinEps)) + beta;
}

// Exact inverse of revin_apply under the same statistics.
template <typename R>
inline R revin_invert(const RevinChannelState<R>& s, R y, R gamma, R beta) {
  return (y - beta) / gamma * std::sqrt(s.var + R(kRevinEps)) + s.mean;
}

// Updates the stats with the new sample, then normalizes it.
template <typename R>
inline R revin_normalize(RevinChannelState<R>& s, R x, R gamma, R beta, R alpha) {
  revin_update(s, x, alpha);
  return revin_apply(s, x, gamma, beta);
}

// ---------------------------------------------------------------------------
// Parameter layout. View names are shared by checkpoints, the optimizer and
// the training graphs.

inline std::string block_prefix(int layer) { return "encoder/block" + std::to_string(layer) + "/"; }

template <typename R>
void add_encoder_params(ParamStore<R>& ps, const EncoderConfig& c) {
  c.validate();
  const std::int64_t C = c.channels, D = c.d_model, I = c.d_inner(), N = c.n_state, W = c.conv_w;
  ps.add("encoder/meta/hyperparams", {8});
  ps.add("encoder/revin/gamma", {C});
  ps.add("encoder/revin/beta", {C});
  ps.add("encoder/embed/w", {D});
  ps.add("encoder/embed/b", {D});
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = block_prefix(l);
    ps.add(p + "w_in", {2 * I, D});
    ps.add(p + "b_in", {2 * I});
    ps.add(p + "w_conv", {I, W});
    ps.add(p + "b_conv", {I});
    ps.add(p + "w_delta", {I, I});
    ps.add(p + "b_delta", {I});
    ps.add(p + "w_b", {N, I});
    ps.add(p + "w_c", {N, I});
    ps.add(p + "a_log", {I, N});
    ps.add(p + "d_skip", {I});
    ps.add(p + "w_out", {D, I});
    ps.add(p + "b_out", {D});
  }
  ps.add("encoder/zproj/w", {c.d_z, D * C});
}

template <typename R>
void init_encoder_params(ParamStore<R>& ps, const EncoderConfig& c) {
  const int D = c.d_model, I = c.d_inner(), N = c.n_state, W = c.conv_w;
  std::mt19937 rng(static_cast<std::uint32_t>(c.seed ^ (c.seed >> 32)));

  auto meta = ps.span("encoder/meta/hyperparams");
  meta[0] = static_cast<R>(c.channels);
  meta[1] = static_cast<R>(c.d_model);
  meta[2] = static_cast<R>(c.n_state);
  meta[3] = static_cast<R>(c.layers);
  meta[4] = static_cast<R>(c.conv_w);
  meta[5] = static_cast<R>(c.d_z);
  meta[6] = static_cast<R>(c.revin_alpha);
  meta[7] = R(0);  // reserved
  ps.set_trainable("encoder/meta/", false);

  for (auto& g : ps.span("encoder/revin/gamma")) g = R(1);
  for (auto& b : ps.span("encoder/revin/beta")) b = R(0);
  fill_uniform(ps.span("encoder/embed/w"), rng, -1.0, 1.0);
  for (auto& b : ps.span("encoder/embed/b")) b = R(0);

  std::uniform_real_distribution<double> dt_log(std::log(0.001), std::log(0.1));
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = block_prefix(l);
    fill_kaiming_uniform(ps.span(p + "w_in"), rng, D);
    fill_kaiming_uniform(ps.span(p + "w_conv"), rng, W);
    fill_kaiming_uniform(ps.span(p + "w_delta"), rng, I);
    // step-size bias seeded so initial delta spreads log-uniformly over
    // [0.001, 0.1], giving the stack both short and long memory horizons
    auto b_delta = ps.span(p + "b_delta");
    for (int i = 0; i < I; ++i) b_delta[i] = softplus_inverse(static_cast<R>(std::exp(dt_log(rng))));
    fill_kaiming_uniform(ps.span(p + "w_b"), rng, I);
    fill_kaiming_uniform(ps.span(p + "w_c"), rng, I);
    auto a_log = ps.span(p + "a_log");
    for (int i = 0; i < I; ++i)
      for (int n = 0; n < N; ++n) a_log[static_cast<std::size_t>(i) * N + n] = static_cast<R>(std::log(n + 1.0));
    for (auto& d : ps.span(p + "d_skip")) d = R(1);
    fill_kaiming_uniform(ps.span(p + "w_out"), rng, I);
  }
  fill_kaiming_uniform(ps.span("encoder/zproj/w"), rng, D * c.channels);
}

template <typename R>
BlockWeightsView<R> block_view(const ParamStore<R>& ps, const EncoderConfig& c, int layer) {
  const std::string p = block_prefix(layer);
  BlockWeightsView<R> v;
  v.d_model = c.d_model;
  v.d_inner = c.d_inner();
  v.n_state = c.n_state;
  v.conv_w = c.conv_w;
  v.w_in = ps.span(p + "w_in").data();
  v.b_in = ps.span(p + "b_in").data();
  v.w_conv = ps.span(p + "w_conv").data();
  v.b_conv = ps.span(p + "b_conv").data();
  v.w_delta = ps.span(p + "w_delta").data();
  v.b_delta = ps.span(p + "b_delta").data();
  v.w_b = ps.span(p + "w_b").data();
  v.w_c = ps.span(p + "w_c").data();
  v.a_log = ps.span(p + "a_log").data();
  v.d_skip = ps.span(p + "d_skip").data();
  v.w_out = ps.span(p + "w_out").data();
  v.b_out = ps.span(p + "b_out").data();
  return v;
}

// Fresh store with the layout filled in for `config`.
ParamStore<float> encoder_init(const EncoderConfig& config);

// Recovers the config embedded in a store's meta view.
EncoderConfig encoder_config_from_store(const ParamStore<float>& ps);

// ---------------------------------------------------------------------------
// Streaming state.

struct HiddenSnapshot {
  std::int64_t t = 0;
  std::vector<float> h;  // (d_model * channels)
  std::vector<float> z;  // (d_z)
};

class EncoderStreamState {
 public:
  EncoderStreamState(const EncoderConfig& cfg);

  const EncoderConfig& config() const { return cfg_; }
  std::int64_t timestep() const { return t_; }
  std::span<const float> h_last() const { return {h_last_.data(), h_last_.size()}; }
  std::size_t allocated_bytes() const;

  void reset();

  friend std::span<const float> encoder_step(EncoderStreamState&, std::span<const float>,
                                             const ParamStore<float>&);
  friend HiddenSnapshot snapshot(const EncoderStreamState&, const ParamStore<float>&);

 private:
  EncoderConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<RevinChannelState<float>> revin_;          // C
  std::vector<std::vector<BlockState<float>>> blocks_;   // [C][L]
  std::vector<float> h_last_;                            // D*C
  BlockWork<float> work_;
  std::vector<float> xa_, xb_;  // D ping-pong
};

// Advances the stream by one multichannel sample; returns a view of h_t.
std::span<const float> encoder_step(EncoderStreamState& state, std::span<const float> x,
                                    const ParamStore<float>& ps);

// Full-sequence encode; x_seq is (T x C) channel-interleaved, the result is
// (T x d_model*channels). With streaming_consistent the normalization stats
// replay the streaming recurrence; otherwise whole-sequence statistics are
// used.
std::vector<float> encoder_encode(std::span<const float> x_seq, std::int64_t T,
                                  const ParamStore<float>& ps, const EncoderConfig& cfg,
                                  bool streaming_consistent = true);

// z_tac = W_z h (no bias, so the map is exactly linear).
std::vector<float> make_soft_prompt(std::span<const float> h, const ParamStore<float>& ps,
                                    const EncoderConfig& cfg);

// Copies (t, h_t, z_tac) without touching the stream.
HiddenSnapshot snapshot(const EncoderStreamState& state, const ParamStore<float>& ps);

}  // namespace tacmamba
