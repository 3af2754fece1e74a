#include "tacmamba/baselines.hpp"

#include <algorithm>
#include <cmath>

namespace tacmamba {

const char* to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::cnn1d: return "cnn1d";
    case BaselineKind::lstm_single: return "lstm_single";
    case BaselineKind::lstm_bi_full: return "lstm_bi_full";
    case BaselineKind::attn_full: return "attn_full";
  }
  return "?";
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "cnn1d") return BaselineKind::cnn1d;
  if (s == "lstm_single") return BaselineKind::lstm_single;
  if (s == "lstm_bi_full") return BaselineKind::lstm_bi_full;
  if (s == "attn_full") return BaselineKind::attn_full;
  throw SchemaError("unknown baseline kind: " + s);
}

int baseline_feature_dim(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::cnn1d: return kCnnOut;
    case BaselineKind::lstm_single: return kLstmHidden;
    case BaselineKind::lstm_bi_full: return 2 * kBiLstmHidden;
    case BaselineKind::attn_full: return kAttnDim;
  }
  return 0;
}

namespace {

void add_lstm_params(ParamStore<float>& ps, const std::string& prefix, int hidden, int in_dim) {
  ps.add(prefix + "w_ih", {4 * static_cast<std::int64_t>(hidden), in_dim});
  ps.add(prefix + "w_hh", {4 * static_cast<std::int64_t>(hidden), hidden});
  ps.add(prefix + "b", {4 * static_cast<std::int64_t>(hidden)});
}

void init_lstm_params(ParamStore<float>& ps, const std::string& prefix, int hidden,
                      std::mt19937& rng) {
  fill_kaiming_uniform(ps.span(prefix + "w_ih"), rng, hidden);
  fill_kaiming_uniform(ps.span(prefix + "w_hh"), rng, hidden);
  fill_kaiming_uniform(ps.span(prefix + "b"), rng, hidden);
}

// One LSTM cell step; gate order [i, f, g, o] matches the training-graph op.
void lstm_cell(float x, std::span<const float> w_ih, std::span<const float> w_hh,
               std::span<const float> b, std::vector<float>& h, std::vector<float>& c,
               std::vector<float>& z) {
  const int H = static_cast<int>(h.size());
  const int H4 = 4 * H;
  for (int r = 0; r < H4; ++r) {
    float acc = b[r] + w_ih[r] * x;
    const float* wr = w_hh.data() + static_cast<std::size_t>(r) * H;
    for (int j = 0; j < H; ++j) acc += wr[j] * h[j];
    z[r] = acc;
  }
  for (int j = 0; j < H; ++j) {
    float ig = sigmoid(z[j]);
    float fg = sigmoid(z[H + j]);
    float gg = std::tanh(z[2 * H + j]);
    float og = sigmoid(z[3 * H + j]);
    c[j] = fg * c[j] + ig * gg;
    h[j] = og * std::tanh(c[j]);
  }
}

}  // namespace

std::vector<float> lstm_forward_seq(std::span<const float> x, std::int64_t T,
                                    std::span<const float> w_ih, std::span<const float> w_hh,
                                    std::span<const float> b, int hidden) {
  std::vector<float> out(static_cast<std::size_t>(T) * hidden);
  std::vector<float> h(hidden, 0.0f), c(hidden, 0.0f), z(4 * static_cast<std::size_t>(hidden));
  for (std::int64_t t = 0; t < T; ++t) {
    lstm_cell(x[static_cast<std::size_t>(t)], w_ih, w_hh, b, h, c, z);
    std::copy(h.begin(), h.end(), out.begin() + t * hidden);
  }
  return out;
}

BaselineWeights baseline_init(BaselineKind kind, std::uint64_t seed) {
  BaselineWeights w;
  w.kind = kind;
  std::mt19937 rng(static_cast<std::uint32_t>(seed ^ (seed >> 32)) ^ 0xb5a1u);
  switch (kind) {
    case BaselineKind::cnn1d: {
      w.store.add("cnn/w1", {kCnnC1, 1, kCnnKernel});
      w.store.add("cnn/b1", {kCnnC1});
      w.store.add("cnn/w2", {kCnnC2, kCnnC1, kCnnKernel});
      w.store.add("cnn/b2", {kCnnC2});
      w.store.add("cnn/w3", {kCnnC3, kCnnC2, kCnnKernel});
      w.store.add("cnn/b3", {kCnnC3});
      w.store.add("cnn/w_head", {kCnnOut, kCnnC3});
      w.store.add("cnn/b_head", {kCnnOut});
      fill_kaiming_uniform(w.store.span("cnn/w1"), rng, kCnnKernel);
      fill_kaiming_uniform(w.store.span("cnn/b1"), rng, kCnnKernel);
      fill_kaiming_uniform(w.store.span("cnn/w2"), rng, kCnnC1 * kCnnKernel);
      fill_kaiming_uniform(w.store.span("cnn/b2"), rng, kCnnC1 * kCnnKernel);
      fill_kaiming_uniform(w.store.span("cnn/w3"), rng, kCnnC2 * kCnnKernel);
      fill_kaiming_uniform(w.store.span("cnn/b3"), rng, kCnnC2 * kCnnKernel);
      fill_kaiming_uniform(w.store.span("cnn/w_head"), rng, kCnnC3);
      fill_kaiming_uniform(w.store.span("cnn/b_head"), rng, kCnnC3);
      break;
    }
    case BaselineKind::lstm_single: {
      add_lstm_params(w.store, "lstm/", kLstmHidden, 1);
      init_lstm_params(w.store, "lstm/", kLstmHidden, rng);
      break;
    }
    case BaselineKind::lstm_bi_full: {
      add_lstm_params(w.store, "bilstm/fwd/", kBiLstmHidden, 1);
      add_lstm_params(w.store, "bilstm/bwd/", kBiLstmHidden, 1);
      init_lstm_params(w.store, "bilstm/fwd/", kBiLstmHidden, rng);
      init_lstm_params(w.store, "bilstm/bwd/", kBiLstmHidden, rng);
      break;
    }
    case BaselineKind::attn_full: {
      w.store.add("attn/embed_w", {kAttnDim});
      w.store.add("attn/embed_b", {kAttnDim});
      fill_kaiming_uniform(w.store.span("attn/embed_w"), rng, 1);
      fill_kaiming_uniform(w.store.span("attn/embed_b"), rng, 1);
      for (int l = 0; l < kAttnLayers; ++l) {
        std::string p = "attn/layer" + std::to_string(l) + "/";
        for (const char* name : {"w_q", "w_k", "w_v", "w_o"}) {
          w.store.add(p + name, {kAttnDim, kAttnDim});
          fill_kaiming_uniform(w.store.span(p + name), rng, kAttnDim);
        }
        for (const char* name : {"b_q", "b_k", "b_v", "b_o"}) {
          w.store.add(p + name, {kAttnDim});
          fill_kaiming_uniform(w.store.span(p + name), rng, kAttnDim);
        }
        w.store.add(p + "w_ffn1", {kAttnFfn, kAttnDim});
        w.store.add(p + "b_ffn1", {kAttnFfn});
        w.store.add(p + "w_ffn2", {kAttnDim, kAttnFfn});
        w.store.add(p + "b_ffn2", {kAttnDim});
        fill_kaiming_uniform(w.store.span(p + "w_ffn1"), rng, kAttnDim);
        fill_kaiming_uniform(w.store.span(p + "b_ffn1"), rng, kAttnDim);
        fill_kaiming_uniform(w.store.span(p + "w_ffn2"), rng, kAttnFfn);
        fill_kaiming_uniform(w.store.span(p + "b_ffn2"), rng, kAttnFfn);
      }
      break;
    }
  }
  return w;
}

std::size_t baseline_param_count(const BaselineWeights& w) { return w.store.trainable_count(); }

BaselineStreamState::BaselineStreamState(BaselineKind kind) : kind_(kind) {
  if (!baseline_is_streaming(kind))
    throw StateError("baseline stream state: " + std::string(to_string(kind)) +
                     " is a full-history model");
  if (kind_ == BaselineKind::cnn1d) {
    ring_.assign(kCnnReceptiveField, 0.0f);
    ws_a_.assign(static_cast<std::size_t>(kCnnC1) * (kCnnReceptiveField - kCnnKernel + 1), 0.0f);
    ws_b_.assign(static_cast<std::size_t>(kCnnC2) * kCnnKernel, 0.0f);
    ws_c_.assign(kCnnC3, 0.0f);
    out_.assign(kCnnOut, 0.0f);
  } else {
    h_.assign(kLstmHidden, 0.0f);
    c_.assign(kLstmHidden, 0.0f);
    ws_a_.assign(4 * static_cast<std::size_t>(kLstmHidden), 0.0f);
    out_.assign(kLstmHidden, 0.0f);
  }
}

void BaselineStreamState::reset() {
  t_ = 0;
  ring_pos_ = 0;
  std::fill(ring_.begin(), ring_.end(), 0.0f);
  std::fill(h_.begin(), h_.end(), 0.0f);
  std::fill(c_.begin(), c_.end(), 0.0f);
}

std::size_t BaselineStreamState::allocated_bytes() const {
  return (ring_.capacity() + h_.capacity() + c_.capacity() + ws_a_.capacity() + ws_b_.capacity() +
          ws_c_.capacity() + out_.capacity()) *
         sizeof(float);
}

std::span<const float> baseline_step(BaselineStreamState& st, float x_t, const BaselineWeights& w) {
  if (w.kind != st.kind()) throw ShapeError("baseline_step: state/weights kind mismatch");
  if (st.kind_ == BaselineKind::lstm_single) {
    lstm_cell(x_t, w.store.span("lstm/w_ih"), w.store.span("lstm/w_hh"), w.store.span("lstm/b"),
              st.h_, st.c_, st.ws_a_);
    std::copy(st.h_.begin(), st.h_.end(), st.out_.begin());
    ++st.t_;
    return {st.out_.data(), st.out_.size()};
  }

  // cnn1d: push sample, then evaluate the stack at the newest position only
  st.ring_[static_cast<std::size_t>(st.ring_pos_)] = x_t;
  st.ring_pos_ = (st.ring_pos_ + 1) % kCnnReceptiveField;
  const int R = kCnnReceptiveField, K = kCnnKernel;
  auto raw_at = [&](int back) {  // back = 0 is the newest sample
    int idx = (st.ring_pos_ - 1 - back % R + 2 * R) % R;
    return st.ring_[static_cast<std::size_t>(idx)];
  };
  const int L1 = R - K + 1;  // conv1 positions needed (newest L1 of the window)
  auto w1 = w.store.span("cnn/w1");
  auto b1 = w.store.span("cnn/b1");
  for (int p = 0; p < L1; ++p) {  // p = 0 is the newest conv1 position
    for (int ch = 0; ch < kCnnC1; ++ch) {
      float acc = b1[ch];
      const float* wr = w1.data() + static_cast<std::size_t>(ch) * K;
      for (int k = 0; k < K; ++k) acc += wr[k] * raw_at(p + (K - 1 - k));
      st.ws_a_[static_cast<std::size_t>(p) * kCnnC1 + ch] = silu(acc);
    }
  }
  auto w2 = w.store.span("cnn/w2");
  auto b2 = w.store.span("cnn/b2");
  for (int p = 0; p < K; ++p) {  // conv2 positions feeding the final conv3 tap
    for (int ch = 0; ch < kCnnC2; ++ch) {
      float acc = b2[ch];
      const float* wch = w2.data() + static_cast<std::size_t>(ch) * kCnnC1 * K;
      for (int k = 0; k < K; ++k) {
        const float* col = st.ws_a_.data() + static_cast<std::size_t>(p + (K - 1 - k)) * kCnnC1;
        const float* wk = wch + static_cast<std::size_t>(k) * kCnnC1;
        for (int ci = 0; ci < kCnnC1; ++ci) acc += wk[ci] * col[ci];
      }
      st.ws_b_[static_cast<std::size_t>(p) * kCnnC2 + ch] = silu(acc);
    }
  }
  auto w3 = w.store.span("cnn/w3");
  auto b3 = w.store.span("cnn/b3");
  for (int ch = 0; ch < kCnnC3; ++ch) {
    float acc = b3[ch];
    const float* wch = w3.data() + static_cast<std::size_t>(ch) * kCnnC2 * K;
    for (int k = 0; k < K; ++k) {
      const float* col = st.ws_b_.data() + static_cast<std::size_t>(K - 1 - k) * kCnnC2;
      const float* wk = wch + static_cast<std::size_t>(k) * kCnnC2;
      for (int ci = 0; ci < kCnnC2; ++ci) acc += wk[ci] * col[ci];
    }
    st.ws_c_[static_cast<std::size_t>(ch)] = silu(acc);
  }
  kern::linear_forward(st.ws_c_.data(), w.store.span("cnn/w_head").data(),
                       w.store.span("cnn/b_head").data(), st.out_.data(), 1, kCnnC3, kCnnOut);
  ++st.t_;
  return {st.out_.data(), st.out_.size()};
}

namespace {

// Causal multi-head attention + feedforward, no normalization layers. With
// last_only, queries are evaluated at the final position alone.
void attn_layer(std::vector<float>& x, std::int64_t T, const ParamStore<float>& ps,
                const std::string& p, bool last_only, std::vector<float>& kbuf,
                std::vector<float>& vbuf, std::vector<float>& scores) {
  const int d = kAttnDim, nh = kAttnHeads, dh = d / nh;
  kbuf.resize(static_cast<std::size_t>(T) * d);
  vbuf.resize(static_cast<std::size_t>(T) * d);
  kern::linear_forward(x.data(), ps.span(p + "w_k").data(), ps.span(p + "b_k").data(), kbuf.data(),
                       T, d, d);
  kern::linear_forward(x.data(), ps.span(p + "w_v").data(), ps.span(p + "b_v").data(), vbuf.data(),
                       T, d, d);

  const std::int64_t q_begin = last_only ? T - 1 : 0;
  std::vector<float> q(d), att(d), merged(d);
  std::vector<float> out(static_cast<std::size_t>(last_only ? 1 : T) * d);
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  for (std::int64_t t = q_begin; t < T; ++t) {
    kern::linear_forward(x.data() + t * d, ps.span(p + "w_q").data(), ps.span(p + "b_q").data(),
                         q.data(), 1, d, d);
    for (int h = 0; h < nh; ++h) {
      scores.resize(static_cast<std::size_t>(t + 1));
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t s = 0; s <= t; ++s) {
        float acc = 0.0f;
        const float* kr = kbuf.data() + s * d + h * dh;
        const float* qr = q.data() + h * dh;
        for (int j = 0; j < dh; ++j) acc += qr[j] * kr[j];
        acc *= scale;
        scores[static_cast<std::size_t>(s)] = acc;
        mx = std::max(mx, acc);
      }
      float z = 0.0f;
      for (std::int64_t s = 0; s <= t; ++s) {
        scores[static_cast<std::size_t>(s)] = std::exp(scores[static_cast<std::size_t>(s)] - mx);
        z += scores[static_cast<std::size_t>(s)];
      }
      for (int j = 0; j < dh; ++j) {
        float acc = 0.0f;
        for (std::int64_t s = 0; s <= t; ++s)
          acc += scores[static_cast<std::size_t>(s)] * vbuf[s * d + h * dh + j];
        att[h * dh + j] = acc / z;
      }
    }
    kern::linear_forward(att.data(), ps.span(p + "w_o").data(), ps.span(p + "b_o").data(),
                         merged.data(), 1, d, d);
    float* dst = out.data() + (last_only ? 0 : t) * d;
    for (int j = 0; j < d; ++j) dst[j] = x[t * d + j] + merged[j];
  }

  // feedforward with residual
  const std::int64_t rows = last_only ? 1 : T;
  std::vector<float> f1(static_cast<std::size_t>(rows) * kAttnFfn);
  kern::linear_forward(out.data(), ps.span(p + "w_ffn1").data(), ps.span(p + "b_ffn1").data(),
                       f1.data(), rows, d, kAttnFfn);
  for (auto& v : f1) v = silu(v);
  std::vector<float> f2(static_cast<std::size_t>(rows) * d);
  kern::linear_forward(f1.data(), ps.span(p + "w_ffn2").data(), ps.span(p + "b_ffn2").data(),
                       f2.data(), rows, kAttnFfn, d);
  for (std::int64_t t = 0; t < rows; ++t)
    for (int j = 0; j < d; ++j) f2[t * d + j] += out[t * d + j];
  x = std::move(f2);
}

}  // namespace

std::vector<float> baseline_query_full(const BaselineWeights& w, std::span<const float> x_history) {
  if (baseline_is_streaming(w.kind))
    throw StateError("baseline_query_full: " + std::string(to_string(w.kind)) +
                     " is a streaming model");
  const auto T = static_cast<std::int64_t>(x_history.size());
  if (T < 1) throw ShapeError("baseline_query_full: empty history");

  if (w.kind == BaselineKind::lstm_bi_full) {
    const int H = kBiLstmHidden;
    std::vector<float> fwd = lstm_forward_seq(x_history, T, w.store.span("bilstm/fwd/w_ih"),
                                              w.store.span("bilstm/fwd/w_hh"),
                                              w.store.span("bilstm/fwd/b"), H);
    std::vector<float> rev(x_history.begin(), x_history.end());
    std::reverse(rev.begin(), rev.end());
    std::vector<float> bwd = lstm_forward_seq({rev.data(), rev.size()}, T,
                                              w.store.span("bilstm/bwd/w_ih"),
                                              w.store.span("bilstm/bwd/w_hh"),
                                              w.store.span("bilstm/bwd/b"), H);
    std::vector<float> out(2 * static_cast<std::size_t>(H));
    std::copy(fwd.begin() + (T - 1) * H, fwd.end(), out.begin());
    std::copy(bwd.begin() + (T - 1) * H, bwd.end(), out.begin() + H);
    return out;
  }

  // attn_full: sinusoidal positions, causal attention; layer outputs are
  // needed everywhere except the last layer, which only serves the query.
  const int d = kAttnDim;
  std::vector<float> x(static_cast<std::size_t>(T) * d);
  auto ew = w.store.span("attn/embed_w");
  auto eb = w.store.span("attn/embed_b");
  for (std::int64_t t = 0; t < T; ++t)
    for (int j = 0; j < d; ++j) {
      float pos;
      float expo = static_cast<float>(2 * (j / 2)) / static_cast<float>(d);
      float freq = std::pow(10000.0f, -expo);
      pos = (j % 2 == 0) ? std::sin(static_cast<float>(t) * freq)
                         : std::cos(static_cast<float>(t) * freq);
      x[t * d + j] = ew[j] * x_history[static_cast<std::size_t>(t)] + eb[j] + pos;
    }
  std::vector<float> kbuf, vbuf, scores;
  for (int l = 0; l < kAttnLayers; ++l) {
    bool last_only = (l == kAttnLayers - 1);
    attn_layer(x, last_only ? T : T, w.store, "attn/layer" + std::to_string(l) + "/", last_only,
               kbuf, vbuf, scores);
    if (last_only) break;
  }
  return std::vector<float>(x.begin(), x.begin() + d);
}

// ---------------------------------------------------------------------------
// LstmSingleModel (SequenceModel)

void LstmSingleModel::add_params(ParamStore<float>& ps) const {
  add_lstm_params(ps, "lstm/", hidden_, 1);
}

void LstmSingleModel::init_params(ParamStore<float>& ps) const {
  std::mt19937 rng(static_cast<std::uint32_t>(seed_) ^ 0xb5a1u);
  init_lstm_params(ps, "lstm/", hidden_, rng);
}

std::vector<float> LstmSingleModel::normalized(std::span<const float> x_seq, std::int64_t T) const {
  std::vector<float> xn(static_cast<std::size_t>(T));
  RevinChannelState<float> r;
  for (std::int64_t t = 0; t < T; ++t)
    xn[static_cast<std::size_t>(t)] = revin_normalize(r, x_seq[static_cast<std::size_t>(t)], 1.0f,
                                                      0.0f, 0.01f);
  return xn;
}

int LstmSingleModel::build_h_seq(Tape<float>& tp, StoreBinding<float>& bind,
                                 std::span<const float> x_seq, std::int64_t T) const {
  std::vector<float> xn = normalized(x_seq, T);
  Tensor<float> x({T, 1});
  std::copy(xn.begin(), xn.end(), x.v.begin());
  return tp.lstm_scan(tp.constant(std::move(x)), bind.node("lstm/w_ih"), bind.node("lstm/w_hh"),
                      bind.node("lstm/b"));
}

std::vector<float> LstmSingleModel::encode_plain(std::span<const float> x_seq, std::int64_t T,
                                                 const ParamStore<float>& ps) const {
  std::vector<float> xn = normalized(x_seq, T);
  return lstm_forward_seq({xn.data(), xn.size()}, T, ps.span("lstm/w_ih"), ps.span("lstm/w_hh"),
                          ps.span("lstm/b"), hidden_);
}

}  // namespace tacmamba
