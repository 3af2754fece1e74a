#include "tacmamba/encoder.hpp"

namespace tacmamba {

ParamStore<float> encoder_init(const EncoderConfig& config) {
  ParamStore<float> ps;
  add_encoder_params(ps, config);
  init_encoder_params(ps, config);
  return ps;
}

EncoderConfig encoder_config_from_store(const ParamStore<float>& ps) {
  auto meta = ps.span("encoder/meta/hyperparams");
  EncoderConfig c;
  c.channels = static_cast<int>(meta[0]);
  c.d_model = static_cast<int>(meta[1]);
  c.n_state = static_cast<int>(meta[2]);
  c.layers = static_cast<int>(meta[3]);
  c.conv_w = static_cast<int>(meta[4]);
  c.d_z = static_cast<int>(meta[5]);
  c.revin_alpha = meta[6];
  c.validate();
  return c;
}

EncoderStreamState::EncoderStreamState(const EncoderConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  revin_.assign(cfg_.channels, {});
  blocks_.resize(cfg_.channels);
  for (auto& per_channel : blocks_) {
    per_channel.clear();
    per_channel.reserve(cfg_.layers);
    for (int l = 0; l < cfg_.layers; ++l)
      per_channel.emplace_back(cfg_.d_inner(), cfg_.n_state, cfg_.conv_w);
  }
  h_last_.assign(static_cast<std::size_t>(cfg_.h_dim()), 0.0f);
  work_.ensure(cfg_.d_inner(), cfg_.n_state);
  xa_.assign(cfg_.d_model, 0.0f);
  xb_.assign(cfg_.d_model, 0.0f);
}

void EncoderStreamState::reset() {
  t_ = 0;
  for (auto& r : revin_) r = {};
  for (auto& per_channel : blocks_)
    for (auto& b : per_channel) b.reset();
  std::fill(h_last_.begin(), h_last_.end(), 0.0f);
}

std::size_t EncoderStreamState::allocated_bytes() const {
  std::size_t n = revin_.capacity() * sizeof(RevinChannelState<float>) +
                  h_last_.capacity() * sizeof(float) + xa_.capacity() * sizeof(float) +
                  xb_.capacity() * sizeof(float);
  for (const auto& per_channel : blocks_)
    for (const auto& b : per_channel) n += b.allocated_bytes();
  n += (work_.xz.capacity() + work_.u.capacity() + work_.delta.capacity() + work_.bt.capacity() +
        work_.ct.capacity() + work_.gated.capacity()) *
       sizeof(float);
  return n;
}

std::span<const float> encoder_step(EncoderStreamState& st, std::span<const float> x,
                                    const ParamStore<float>& ps) {
  const EncoderConfig& c = st.cfg_;
  if (static_cast<int>(x.size()) != c.channels) throw ShapeError("encoder_step: channel count mismatch");
  require_finite(x.data(), x.size(), "encoder_step input");

  auto gamma = ps.span("encoder/revin/gamma");
  auto beta = ps.span("encoder/revin/beta");
  auto embed_w = ps.span("encoder/embed/w");
  auto embed_b = ps.span("encoder/embed/b");
  const int D = c.d_model;

  for (int ch = 0; ch < c.channels; ++ch) {
    float xn = revin_normalize(st.revin_[ch], x[ch], gamma[ch], beta[ch], c.revin_alpha);
    for (int d = 0; d < D; ++d) st.xa_[d] = embed_w[d] * xn + embed_b[d];
    for (int l = 0; l < c.layers; ++l) {
      auto view = block_view(ps, c, l);
      mamba_block_step(st.blocks_[ch][l], st.xa_.data(), st.xb_.data(), view, st.work_);
      std::swap(st.xa_, st.xb_);
    }
    std::copy(st.xa_.begin(), st.xa_.end(), st.h_last_.begin() + static_cast<std::size_t>(ch) * D);
  }
  ++st.t_;
  return {st.h_last_.data(), st.h_last_.size()};
}

std::vector<float> encoder_encode(std::span<const float> x_seq, std::int64_t T,
                                  const ParamStore<float>& ps, const EncoderConfig& cfg,
                                  bool streaming_consistent) {
  cfg.validate();
  if (T < 1) throw ShapeError("encoder_encode: empty sequence");
  if (static_cast<std::int64_t>(x_seq.size()) != T * cfg.channels)
    throw ShapeError("encoder_encode: sequence length does not match channel count");
  require_finite(x_seq.data(), x_seq.size(), "encoder_encode input");

  auto gamma = ps.span("encoder/revin/gamma");
  auto beta = ps.span("encoder/revin/beta");
  auto embed_w = ps.span("encoder/embed/w");
  auto embed_b = ps.span("encoder/embed/b");
  const int D = cfg.d_model, C = cfg.channels;

  std::vector<float> h_seq(static_cast<std::size_t>(T) * cfg.h_dim());
  std::vector<float> xn(T), xa(static_cast<std::size_t>(T) * D), xb(static_cast<std::size_t>(T) * D);

  for (int ch = 0; ch < C; ++ch) {
    if (streaming_consistent) {
      RevinChannelState<float> r;
      for (std::int64_t t = 0; t < T; ++t)
        xn[t] = revin_normalize(r, x_seq[t * C + ch], gamma[ch], beta[ch], cfg.revin_alpha);
    } else {
      double mean = 0.0;
      for (std::int64_t t = 0; t < T; ++t) mean += x_seq[t * C + ch];
      mean /= static_cast<double>(T);
      double var = 0.0;
      for (std::int64_t t = 0; t < T; ++t) {
        double d = x_seq[t * C + ch] - mean;
        var += d * d;
      }
      var /= static_cast<double>(T);
      RevinChannelState<float> r{static_cast<float>(mean), static_cast<float>(var)};
      for (std::int64_t t = 0; t < T; ++t) xn[t] = revin_apply(r, x_seq[t * C + ch], gamma[ch], beta[ch]);
    }

    for (std::int64_t t = 0; t < T; ++t)
      for (int d = 0; d < D; ++d) xa[t * D + d] = embed_w[d] * xn[t] + embed_b[d];
    for (int l = 0; l < cfg.layers; ++l) {
      auto view = block_view(ps, cfg, l);
      mamba_block_forward(xa.data(), xb.data(), T, view);
      std::swap(xa, xb);
    }
    for (std::int64_t t = 0; t < T; ++t)
      std::copy(xa.begin() + t * D, xa.begin() + (t + 1) * D,
                h_seq.begin() + t * cfg.h_dim() + static_cast<std::size_t>(ch) * D);
  }
  return h_seq;
}

std::vector<float> make_soft_prompt(std::span<const float> h, const ParamStore<float>& ps,
                                    const EncoderConfig& cfg) {
  if (static_cast<int>(h.size()) != cfg.h_dim()) throw ShapeError("make_soft_prompt: h size");
  require_finite(h.data(), h.size(), "make_soft_prompt input");
  auto wz = ps.span("encoder/zproj/w");
  std::vector<float> z(cfg.d_z);
  kern::linear_forward(h.data(), wz.data(), static_cast<const float*>(nullptr), z.data(), 1,
                       cfg.h_dim(), cfg.d_z);
  return z;
}

HiddenSnapshot snapshot(const EncoderStreamState& st, const ParamStore<float>& ps) {
  if (st.t_ == 0) throw StateError("snapshot: no history, stream has not stepped yet");
  HiddenSnapshot s;
  s.t = st.t_;
  s.h.assign(st.h_last_.begin(), st.h_last_.end());
  s.z = make_soft_prompt({s.h.data(), s.h.size()}, ps, st.cfg_);
  return s;
}

}  // namespace tacmamba
