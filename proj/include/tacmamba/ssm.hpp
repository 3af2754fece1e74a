#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tacmamba/common.hpp"

// Selective state-space numerics. The latent state of one block is an
// (inner-channels x state-dim) matrix h updated per sample as
//
//   h[i,n] <- exp(delta[i] * A[i,n]) * h[i,n] + (delta[i] * b[n]) * u[i]
//   y[i]    = sum_n c[n] * h[i,n] + d_skip[i] * u[i]
//
// with A = -exp(a_log) strictly negative and (delta, b, c) recomputed from the
// input at every step. The input-side discretization uses the Euler form
// b_bar = delta * b; the exact hold form ((exp(delta*A)-1)/A)*b exists only as
// a test oracle. Step cost and state size are independent of how many samples
// came before.

namespace tacmamba {

template <typename R>
inline R sigmoid(R x) {
  if (x >= R(0)) return R(1) / (R(1) + std::exp(-x));
  R e = std::exp(x);
  return e / (R(1) + e);
}

template <typename R>
inline R silu(R x) {
  return x * sigmoid(x);
}

template <typename R>
inline R softplus(R x) {
  if (x > R(0)) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// Inverse of softplus, used to seed delta biases toward target step sizes.
template <typename R>
inline R softplus_inverse(R y) {
  // y = log(1+e^x)  =>  x = log(e^y - 1)
  return std::log(std::expm1(y));
}

namespace kern {

// y[t,o] = b[o] + sum_j w[o,j] * x[t,j]; pass b = nullptr for no bias.
template <typename R>
void linear_forward(const R* x, const R* w, const R* b, R* y, std::int64_t T, int in, int out) {
  for (std::int64_t t = 0; t < T; ++t) {
    const R* xr = x + t * in;
    R* yr = y + t * out;
    for (int o = 0; o < out; ++o) {
      R acc = b ? b[o] : R(0);
      const R* wr = w + static_cast<std::int64_t>(o) * in;
      for (int j = 0; j < in; ++j) acc += wr[j] * xr[j];
      yr[o] = acc;
    }
  }
}

// Depthwise causal convolution over time: y[t,i] = b[i] + sum_k w[i,k] * x[t-W+1+k, i]
// with zero padding on the left. Tap k = W-1 is the current sample.
template <typename R>
void conv_dw_causal_forward(const R* x, const R* w, const R* b, R* y, std::int64_t T, int I, int W) {
  for (std::int64_t t = 0; t < T; ++t) {
    R* yr = y + t * I;
    for (int i = 0; i < I; ++i) {
      R acc = b ? b[i] : R(0);
      const R* wi = w + static_cast<std::int64_t>(i) * W;
      for (int k = 0; k < W; ++k) {
        std::int64_t src = t - (W - 1) + k;
        if (src >= 0) acc += wi[k] * x[src * I + i];
      }
      yr[i] = acc;
    }
  }
}

// One recurrence step over the full (I x N) state. h is updated in place.
template <typename R>
void ssm_step_inplace(R* h, const R* u, const R* delta, const R* b, const R* c, const R* a_log,
                      const R* d_skip, R* y, int I, int N) {
  for (int i = 0; i < I; ++i) {
    const R di = delta[i];
    const R ui = u[i];
    const R* al = a_log + static_cast<std::int64_t>(i) * N;
    R* hi = h + static_cast<std::int64_t>(i) * N;
    R acc = d_skip ? d_skip[i] * ui : R(0);
    for (int n = 0; n < N; ++n) {
      R a = -std::exp(al[n]);
      R abar = std::exp(di * a);
      R hn = abar * hi[n] + (di * b[n]) * ui;
      hi[n] = hn;
      acc += c[n] * hn;
    }
    y[i] = acc;
  }
}

// Full-sequence evaluation of the same recurrence from a zero state.
// h_all, when non-null, receives the post-update state at every t (T x I x N)
// for use by reverse-mode differentiation.
template <typename R>
void ssm_scan_forward(const R* u, const R* delta, const R* bm, const R* cm, const R* a_log,
                      const R* d_skip, R* y, R* h_all, std::vector<R>& h_work, std::int64_t T, int I,
                      int N) {
  h_work.assign(static_cast<std::size_t>(I) * N, R(0));
  for (std::int64_t t = 0; t < T; ++t) {
    ssm_step_inplace(h_work.data(), u + t * I, delta + t * I, bm + t * N, cm + t * N, a_log, d_skip,
                     y + t * I, I, N);
    if (h_all) std::copy(h_work.begin(), h_work.end(), h_all + t * static_cast<std::int64_t>(I) * N);
  }
}

}  // namespace kern

// ---------------------------------------------------------------------------
// Contract-level operations. These validate their domains and allocate their
// results; hot paths use the kern:: functions directly with reused buffers.

// a_bar[i,n] = exp(delta[i] * -exp(a_log[i,n])). delta >= 0 elementwise.
template <typename R>
std::vector<R> discretize_a(std::span<const R> a_log, std::span<const R> delta, int inner, int state) {
  if (static_cast<int>(a_log.size()) != inner * state) throw ShapeError("discretize_a: a_log size");
  if (static_cast<int>(delta.size()) != inner) throw ShapeError("discretize_a: delta size");
  require_finite(a_log.data(), a_log.size(), "discretize_a a_log");
  require_finite(delta.data(), delta.size(), "discretize_a delta");
  for (R d : delta)
    if (d < R(0)) throw NumericError("discretize_a: negative step size");
  std::vector<R> out(a_log.size());
  for (int i = 0; i < inner; ++i)
    for (int n = 0; n < state; ++n) {
      R a = -std::exp(a_log[static_cast<std::size_t>(i) * state + n]);
      out[static_cast<std::size_t>(i) * state + n] = std::exp(delta[i] * a);
    }
  return out;
}

// Euler input discretization: b_bar = delta * b.
template <typename R>
std::vector<R> discretize_b(std::span<const R> b, R delta) {
  if (!std::isfinite(delta) || delta < R(0)) throw NumericError("discretize_b: bad step size");
  require_finite(b.data(), b.size(), "discretize_b b");
  std::vector<R> out(b.size());
  for (std::size_t n = 0; n < b.size(); ++n) out[n] = delta * b[n];
  return out;
}

// Latent state of one selective SSM. Fixed size for the life of the value.
template <typename R>
struct SsmState {
  int inner = 0;
  int state = 0;
  std::vector<R> h;  // (inner x state)

  SsmState() = default;
  SsmState(int i, int n) : inner(i), state(n), h(static_cast<std::size_t>(i) * n, R(0)) {}
  std::size_t allocated_bytes() const { return h.capacity() * sizeof(R); }
};

// Per-timestep selective parameters.
template <typename R>
struct SelectiveParams {
  std::vector<R> delta;  // (inner), > 0
  std::vector<R> b;      // (state)
  std::vector<R> c;      // (state)
};

template <typename R>
std::vector<R> ssm_step(SsmState<R>& st, std::span<const R> u, const SelectiveParams<R>& p,
                        std::span<const R> a_log, std::span<const R> d_skip) {
  const int I = st.inner, N = st.state;
  if (static_cast<int>(u.size()) != I || static_cast<int>(p.delta.size()) != I ||
      static_cast<int>(p.b.size()) != N || static_cast<int>(p.c.size()) != N ||
      static_cast<int>(a_log.size()) != I * N || static_cast<int>(d_skip.size()) != I)
    throw ShapeError("ssm_step: argument shapes do not match state");
  std::vector<R> y(I);
  kern::ssm_step_inplace(st.h.data(), u.data(), p.delta.data(), p.b.data(), p.c.data(), a_log.data(),
                         d_skip.data(), y.data(), I, N);
  return y;
}

template <typename R>
std::vector<R> ssm_scan(std::span<const R> u_seq, const std::vector<SelectiveParams<R>>& params_seq,
                        std::span<const R> a_log, std::span<const R> d_skip, int inner, int state) {
  const std::int64_t T = static_cast<std::int64_t>(params_seq.size());
  if (T < 1) throw ShapeError("ssm_scan: empty sequence");
  if (static_cast<std::int64_t>(u_seq.size()) != T * inner)
    throw ShapeError("ssm_scan: u_seq length does not match params_seq");
  std::vector<R> dlt(T * inner), bm(T * state), cm(T * state);
  for (std::int64_t t = 0; t < T; ++t) {
    const auto& p = params_seq[t];
    if (static_cast<int>(p.delta.size()) != inner || static_cast<int>(p.b.size()) != state ||
        static_cast<int>(p.c.size()) != state)
      throw ShapeError("ssm_scan: params shape");
    std::copy(p.delta.begin(), p.delta.end(), dlt.begin() + t * inner);
    std::copy(p.b.begin(), p.b.end(), bm.begin() + t * state);
    std::copy(p.c.begin(), p.c.end(), cm.begin() + t * state);
  }
  std::vector<R> y(T * inner), h_work;
  kern::ssm_scan_forward(u_seq.data(), dlt.data(), bm.data(), cm.data(), a_log.data(), d_skip.data(),
                         y.data(), static_cast<R*>(nullptr), h_work, T, inner, state);
  return y;
}

// ---------------------------------------------------------------------------
// Mamba block: input projection -> depthwise causal conv -> SiLU -> selective
// SSM -> SiLU gate -> output projection -> residual.

template <typename R>
struct BlockWeightsView {
  int d_model = 0, d_inner = 0, n_state = 0, conv_w = 0;
  const R* w_in = nullptr;     // (2*d_inner, d_model)
  const R* b_in = nullptr;     // (2*d_inner)
  const R* w_conv = nullptr;   // (d_inner, conv_w)
  const R* b_conv = nullptr;   // (d_inner)
  const R* w_delta = nullptr;  // (d_inner, d_inner)
  const R* b_delta = nullptr;  // (d_inner)
  const R* w_b = nullptr;      // (n_state, d_inner)
  const R* w_c = nullptr;      // (n_state, d_inner)
  const R* a_log = nullptr;    // (d_inner, n_state)
  const R* d_skip = nullptr;   // (d_inner)
  const R* w_out = nullptr;    // (d_model, d_inner)
  const R* b_out = nullptr;    // (d_model)
};

// Selective parameters from the current (post-conv, post-SiLU) input:
// delta = softplus(w_delta u + b_delta), b = w_b u, c = w_c u.
template <typename R>
SelectiveParams<R> selective_projection(std::span<const R> u, const BlockWeightsView<R>& w) {
  const int I = w.d_inner, N = w.n_state;
  if (static_cast<int>(u.size()) != I) throw ShapeError("selective_projection: input size");
  require_finite(u.data(), u.size(), "selective_projection input");
  SelectiveParams<R> p;
  p.delta.resize(I);
  p.b.resize(N);
  p.c.resize(N);
  kern::linear_forward(u.data(), w.w_delta, w.b_delta, p.delta.data(), 1, I, I);
  for (auto& d : p.delta) d = softplus(d);
  kern::linear_forward(u.data(), w.w_b, static_cast<const R*>(nullptr), p.b.data(), 1, I, N);
  kern::linear_forward(u.data(), w.w_c, static_cast<const R*>(nullptr), p.c.data(), 1, I, N);
  return p;
}

// Streaming state of one block: the conv ring holds the previous conv_w - 1
// pre-activation samples, oldest first at ring_pos.
template <typename R>
struct BlockState {
  int d_inner = 0, n_state = 0, conv_w = 0;
  std::vector<R> conv_hist;  // ((conv_w - 1) x d_inner)
  int ring_pos = 0;
  SsmState<R> ssm;

  BlockState() = default;
  BlockState(int inner, int state, int w)
      : d_inner(inner),
        n_state(state),
        conv_w(w),
        conv_hist(static_cast<std::size_t>(w > 1 ? w - 1 : 0) * inner, R(0)),
        ssm(inner, state) {}

  void reset() {
    std::fill(conv_hist.begin(), conv_hist.end(), R(0));
    ring_pos = 0;
    std::fill(ssm.h.begin(), ssm.h.end(), R(0));
  }
  std::size_t allocated_bytes() const {
    return conv_hist.capacity() * sizeof(R) + ssm.allocated_bytes();
  }
};

// Scratch buffers so a step never allocates.
template <typename R>
struct BlockWork {
  std::vector<R> xz, u, delta, bt, ct, gated;
  void ensure(int d_inner, int n_state) {
    xz.resize(2 * static_cast<std::size_t>(d_inner));
    u.resize(d_inner);
    delta.resize(d_inner);
    bt.resize(n_state);
    ct.resize(n_state);
    gated.resize(d_inner);
  }
};

// One streaming step: reads x (d_model), writes out (d_model), advances state.
template <typename R>
void mamba_block_step(BlockState<R>& st, const R* x, R* out, const BlockWeightsView<R>& w,
                      BlockWork<R>& ws) {
  const int D = w.d_model, I = w.d_inner, N = w.n_state, W = w.conv_w;
  if (st.d_inner != I || st.n_state != N || st.conv_w != W)
    throw ShapeError("mamba_block_step: state does not match weights");
  ws.ensure(I, N);

  kern::linear_forward(x, w.w_in, w.b_in, ws.xz.data(), 1, D, 2 * I);
  R* u_pre = ws.xz.data();
  R* gate = ws.xz.data() + I;

  // conv over ring history (taps 0..W-2) plus the current sample (tap W-1)
  const int H = W - 1;
  for (int i = 0; i < I; ++i) {
    R acc = w.b_conv ? w.b_conv[i] : R(0);
    const R* wi = w.w_conv + static_cast<std::int64_t>(i) * W;
    for (int k = 0; k < H; ++k) {
      const R* row = st.conv_hist.data() + static_cast<std::size_t>((st.ring_pos + k) % H) * I;
      acc += wi[k] * row[i];
    }
    acc += wi[W - 1] * u_pre[i];
    ws.u[i] = silu(acc);
  }
  if (H > 0) {
    R* row = st.conv_hist.data() + static_cast<std::size_t>(st.ring_pos) * I;
    std::copy(u_pre, u_pre + I, row);
    st.ring_pos = (st.ring_pos + 1) % H;
  }

  kern::linear_forward(ws.u.data(), w.w_delta, w.b_delta, ws.delta.data(), 1, I, I);
  for (auto& d : ws.delta) d = softplus(d);
  kern::linear_forward(ws.u.data(), w.w_b, static_cast<const R*>(nullptr), ws.bt.data(), 1, I, N);
  kern::linear_forward(ws.u.data(), w.w_c, static_cast<const R*>(nullptr), ws.ct.data(), 1, I, N);

  kern::ssm_step_inplace(st.ssm.h.data(), ws.u.data(), ws.delta.data(), ws.bt.data(), ws.ct.data(),
                         w.a_log, w.d_skip, ws.gated.data(), I, N);
  for (int i = 0; i < I; ++i) ws.gated[i] *= silu(gate[i]);

  kern::linear_forward(ws.gated.data(), w.w_out, w.b_out, out, 1, I, D);
  for (int d = 0; d < D; ++d) out[d] += x[d];
}

// Full-sequence forward of one block from a fresh state; x and out are
// (T x d_model). Matches step-by-step evaluation sample for sample.
template <typename R>
void mamba_block_forward(const R* x, R* out, std::int64_t T, const BlockWeightsView<R>& w) {
  const int D = w.d_model, I = w.d_inner, N = w.n_state, W = w.conv_w;
  std::vector<R> xz(T * 2 * static_cast<std::size_t>(I));
  kern::linear_forward(x, w.w_in, w.b_in, xz.data(), T, D, 2 * I);
  std::vector<R> u_pre(T * static_cast<std::size_t>(I)), gate(T * static_cast<std::size_t>(I));
  for (std::int64_t t = 0; t < T; ++t)
    for (int i = 0; i < I; ++i) {
      u_pre[t * I + i] = xz[t * 2 * I + i];
      gate[t * I + i] = xz[t * 2 * I + I + i];
    }
  std::vector<R> u(T * static_cast<std::size_t>(I));
  kern::conv_dw_causal_forward(u_pre.data(), w.w_conv, w.b_conv, u.data(), T, I, W);
  for (auto& v : u) v = silu(v);

  std::vector<R> dlt(T * static_cast<std::size_t>(I)), bm(T * static_cast<std::size_t>(N)),
      cm(T * static_cast<std::size_t>(N));
  kern::linear_forward(u.data(), w.w_delta, w.b_delta, dlt.data(), T, I, I);
  for (auto& d : dlt) d = softplus(d);
  kern::linear_forward(u.data(), w.w_b, static_cast<const R*>(nullptr), bm.data(), T, I, N);
  kern::linear_forward(u.data(), w.w_c, static_cast<const R*>(nullptr), cm.data(), T, I, N);

  std::vector<R> y(T * static_cast<std::size_t>(I)), h_work;
  kern::ssm_scan_forward(u.data(), dlt.data(), bm.data(), cm.data(), w.a_log, w.d_skip, y.data(),
                         static_cast<R*>(nullptr), h_work, T, I, N);

  for (std::int64_t t = 0; t < T; ++t)
    for (int i = 0; i < I; ++i) y[t * I + i] *= silu(gate[t * I + i]);
  kern::linear_forward(y.data(), w.w_out, w.b_out, out, T, I, D);
  for (std::int64_t t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) out[t * D + d] += x[t * D + d];
}

}  // namespace tacmamba
