#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <vector>

#include "tacmamba/common.hpp"
#include "tacmamba/ssm.hpp"

// Recorded-operation reverse accumulation over a fixed op vocabulary. Each op
// appends one node holding its forward value and a closure that scatters the
// node's gradient back to its inputs. Construction order is evaluation order,
// so running the closures from the loss down to node 0 is a valid reverse
// sweep. Values derived only from constants stay constants: no closure is
// recorded and gradients never flow into them (this is how frozen parameters
// are excluded).

namespace tacmamba {

template <typename R>
class Tape {
 public:
  struct Node {
    Tensor<R> val;
    Tensor<R> grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;
  };

  int constant(Tensor<R> v) { return push(std::move(v), false, nullptr); }
  int leaf(Tensor<R> v) { return push(std::move(v), true, nullptr); }

  const Tensor<R>& val(int id) const { return nodes_[check(id)].val; }
  Tensor<R>& grad(int id) { return ensure_grad(check(id)); }
  bool needs_grad(int id) const { return nodes_[check(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(int loss_id) {
    if (nodes_.empty()) throw StateError("backward before any forward pass was recorded");
    check(loss_id);
    if (nodes_[loss_id].val.numel() != 1) throw ShapeError("backward: loss must be scalar");
    ensure_grad(loss_id).v[0] = R(1);
    for (int id = loss_id; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.back && n.needs_grad && !n.grad.v.empty()) n.back(*this);
    }
  }

  // -- elementwise ----------------------------------------------------------

  int add(int a, int b) {
    const auto &va = val(a), &vb = val(b);
    if (va.shape != vb.shape) throw ShapeError("add: shape mismatch");
    Tensor<R> out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] += vb.v[i];
    return record({a, b}, std::move(out), [a, b](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      if (t.needs_grad(a)) {
        auto& ga = t.grad(a).v;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad(b).v;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }

  int mul(int a, int b) {
    const auto &va = val(a), &vb = val(b);
    if (va.shape != vb.shape) throw ShapeError("mul: shape mismatch");
    Tensor<R> out = va;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.v[i] *= vb.v[i];
    return record({a, b}, std::move(out), [a, b](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& xa = t.val(a).v;
      const auto& xb = t.val(b).v;
      if (t.needs_grad(a)) {
        auto& ga = t.grad(a).v;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * xb[i];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad(b).v;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xa[i];
      }
    });
  }

  int scale(int a, R c) {
    Tensor<R> out = val(a);
    for (auto& x : out.v) x *= c;
    return record({a}, std::move(out), [a, c](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      auto& ga = t.grad(a).v;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
  }

  int silu_op(int x) {
    Tensor<R> out = val(x);
    for (auto& v : out.v) v = silu(v);
    return record({x}, std::move(out), [x](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& xv = t.val(x).v;
      auto& gx = t.grad(x).v;
      for (std::size_t i = 0; i < g.size(); ++i) {
        R s = sigmoid(xv[i]);
        gx[i] += g[i] * s * (R(1) + xv[i] * (R(1) - s));
      }
    });
  }

  int softplus_op(int x) {
    Tensor<R> out = val(x);
    for (auto& v : out.v) v = softplus(v);
    return record({x}, std::move(out), [x](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& xv = t.val(x).v;
      auto& gx = t.grad(x).v;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * sigmoid(xv[i]);
    });
  }

  int exp_op(int x) {
    Tensor<R> out = val(x);
    for (auto& v : out.v) v = std::exp(v);
    return record({x}, std::move(out), [x](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& yv = t.nodes_[self].val.v;
      auto& gx = t.grad(x).v;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * yv[i];
    });
  }

  // y = gamma * x + beta with scalar gamma, beta (one-element tensors).
  int scale_shift(int x, int gamma, int beta) {
    if (val(gamma).numel() != 1 || val(beta).numel() != 1)
      throw ShapeError("scale_shift: gamma/beta must be scalars");
    R gm = val(gamma).v[0], bt = val(beta).v[0];
    Tensor<R> out = val(x);
    for (auto& v : out.v) v = gm * v + bt;
    return record({x, gamma, beta}, std::move(out), [x, gamma, beta, gm](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& xv = t.val(x).v;
      if (t.needs_grad(gamma)) {
        R acc = R(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
        t.grad(gamma).v[0] += acc;
      }
      if (t.needs_grad(beta)) {
        R acc = R(0);
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i];
        t.grad(beta).v[0] += acc;
      }
      if (t.needs_grad(x)) {
        auto& gx = t.grad(x).v;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += gm * g[i];
      }
    });
  }

  // (T) scalar sequence lifted per step: out[t,d] = w[d]*x[t] + b[d].
  int embed_scalar(int x, int w, int b) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    const auto& bv = val(b);
    const std::int64_t T = xv.numel(), D = wv.numel();
    if (bv.numel() != D) throw ShapeError("embed_scalar: bias size");
    Tensor<R> out({T, D});
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t d = 0; d < D; ++d) out.v[t * D + d] = wv.v[d] * xv.v[t] + bv.v[d];
    return record({x, w, b}, std::move(out), [x, w, b, T, D](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& xv2 = t.val(x).v;
      const auto& wv2 = t.val(w).v;
      if (t.needs_grad(w)) {
        auto& gw = t.grad(w).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (std::int64_t d = 0; d < D; ++d) gw[d] += g[ti * D + d] * xv2[ti];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad(b).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (std::int64_t d = 0; d < D; ++d) gb[d] += g[ti * D + d];
      }
      if (t.needs_grad(x)) {
        auto& gx = t.grad(x).v;
        for (std::int64_t ti = 0; ti < T; ++ti) {
          R acc = R(0);
          for (std::int64_t d = 0; d < D; ++d) acc += g[ti * D + d] * wv2[d];
          gx[ti] += acc;
        }
      }
    });
  }

  // x: (T, in), w: (out, in), optional b: (out) -> (T, out)
  int linear(int x, int w, int b = -1) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    const std::int64_t T = xv.rows();
    const int in = static_cast<int>(xv.cols());
    if (wv.shape.size() != 2 || wv.shape[1] != in) throw ShapeError("linear: weight shape");
    const int out_dim = static_cast<int>(wv.shape[0]);
    if (b >= 0 && val(b).numel() != out_dim) throw ShapeError("linear: bias size");
    Tensor<R> out({T, out_dim});
    kern::linear_forward(xv.data(), wv.data(), b >= 0 ? val(b).data() : nullptr, out.data(), T, in,
                         out_dim);
    return record({x, w, b}, std::move(out), [x, w, b, T, in, out_dim](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& xv2 = t.val(x).v;
      const auto& wv2 = t.val(w).v;
      if (t.needs_grad(x)) {
        auto& gx = t.grad(x).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int o = 0; o < out_dim; ++o) {
            R go = g[ti * out_dim + o];
            const R* wr = wv2.data() + static_cast<std::size_t>(o) * in;
            for (int j = 0; j < in; ++j) gx[ti * in + j] += go * wr[j];
          }
      }
      if (t.needs_grad(w)) {
        auto& gw = t.grad(w).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int o = 0; o < out_dim; ++o) {
            R go = g[ti * out_dim + o];
            R* gwr = gw.data() + static_cast<std::size_t>(o) * in;
            const R* xr = xv2.data() + static_cast<std::size_t>(ti) * in;
            for (int j = 0; j < in; ++j) gwr[j] += go * xr[j];
          }
      }
      if (b >= 0 && t.needs_grad(b)) {
        auto& gb = t.grad(b).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int o = 0; o < out_dim; ++o) gb[o] += g[ti * out_dim + o];
      }
    });
  }

  // x: (T, I), w: (I, W), b: (I) -> (T, I), causal over time.
  int conv_dw(int x, int w, int b) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    const std::int64_t T = xv.rows();
    const int I = static_cast<int>(xv.cols());
    if (wv.shape.size() != 2 || wv.shape[0] != I) throw ShapeError("conv_dw: weight shape");
    const int W = static_cast<int>(wv.shape[1]);
    if (val(b).numel() != I) throw ShapeError("conv_dw: bias size");
    Tensor<R> out({T, I});
    kern::conv_dw_causal_forward(xv.data(), wv.data(), val(b).data(), out.data(), T, I, W);
    return record({x, w, b}, std::move(out), [x, w, b, T, I, W](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& xv2 = t.val(x).v;
      const auto& wv2 = t.val(w).v;
      if (t.needs_grad(x)) {
        auto& gx = t.grad(x).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int i = 0; i < I; ++i) {
            R go = g[ti * I + i];
            for (int k = 0; k < W; ++k) {
              std::int64_t src = ti - (W - 1) + k;
              if (src >= 0) gx[src * I + i] += go * wv2[static_cast<std::size_t>(i) * W + k];
            }
          }
      }
      if (t.needs_grad(w)) {
        auto& gw = t.grad(w).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int i = 0; i < I; ++i) {
            R go = g[ti * I + i];
            for (int k = 0; k < W; ++k) {
              std::int64_t src = ti - (W - 1) + k;
              if (src >= 0) gw[static_cast<std::size_t>(i) * W + k] += go * xv2[src * I + i];
            }
          }
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad(b).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int i = 0; i < I; ++i) gb[i] += g[ti * I + i];
      }
    });
  }

  // -- reshaping ------------------------------------------------------------

  int slice_cols(int x, int c0, int c1) {
    const auto& xv = val(x);
    const std::int64_t T = xv.rows();
    const int cols = static_cast<int>(xv.cols());
    if (c0 < 0 || c1 <= c0 || c1 > cols) throw ShapeError("slice_cols: bad range");
    const int w = c1 - c0;
    Tensor<R> out({T, w});
    for (std::int64_t t = 0; t < T; ++t)
      for (int c = 0; c < w; ++c) out.v[t * w + c] = xv.v[t * cols + c0 + c];
    return record({x}, std::move(out), [x, c0, w, cols, T](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      auto& gx = t.grad(x).v;
      for (std::int64_t ti = 0; ti < T; ++ti)
        for (int c = 0; c < w; ++c) gx[ti * cols + c0 + c] += g[ti * w + c];
    });
  }

  int concat_cols(int a, int b) {
    const auto& va = val(a);
    const auto& vb = val(b);
    if (va.rows() != vb.rows()) throw ShapeError("concat_cols: row mismatch");
    const std::int64_t T = va.rows();
    const int ca = static_cast<int>(va.cols()), cb = static_cast<int>(vb.cols());
    Tensor<R> out({T, ca + cb});
    for (std::int64_t t = 0; t < T; ++t) {
      for (int c = 0; c < ca; ++c) out.v[t * (ca + cb) + c] = va.v[t * ca + c];
      for (int c = 0; c < cb; ++c) out.v[t * (ca + cb) + ca + c] = vb.v[t * cb + c];
    }
    return record({a, b}, std::move(out), [a, b, T, ca, cb](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      if (t.needs_grad(a)) {
        auto& ga = t.grad(a).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int c = 0; c < ca; ++c) ga[ti * ca + c] += g[ti * (ca + cb) + c];
      }
      if (t.needs_grad(b)) {
        auto& gb = t.grad(b).v;
        for (std::int64_t ti = 0; ti < T; ++ti)
          for (int c = 0; c < cb; ++c) gb[ti * cb + c] += g[ti * (ca + cb) + ca + c];
      }
    });
  }

  int gather_rows(int x, std::vector<std::int64_t> rows) {
    const auto& xv = val(x);
    const std::int64_t T = xv.rows();
    const int cols = static_cast<int>(xv.cols());
    for (auto r : rows)
      if (r < 0 || r >= T) throw ShapeError("gather_rows: index out of range");
    Tensor<R> out({static_cast<std::int64_t>(rows.size()), cols});
    for (std::size_t k = 0; k < rows.size(); ++k)
      std::copy(xv.v.begin() + rows[k] * cols, xv.v.begin() + (rows[k] + 1) * cols,
                out.v.begin() + static_cast<std::int64_t>(k) * cols);
    auto rows_ptr = std::make_shared<std::vector<std::int64_t>>(std::move(rows));
    return record({x}, std::move(out), [x, rows_ptr, cols](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      auto& gx = t.grad(x).v;
      for (std::size_t k = 0; k < rows_ptr->size(); ++k) {
        const R* gr = g.data() + static_cast<std::int64_t>(k) * cols;
        R* dst = gx.data() + (*rows_ptr)[k] * cols;
        for (int c = 0; c < cols; ++c) dst[c] += gr[c];
      }
    });
  }

  // -- model-level fused ops -------------------------------------------------

  // Selective scan; see kern::ssm_scan_forward for the recurrence. The
  // backward sweep replays time in reverse with the stored per-step states.
  int ssm_scan(int u, int dlt, int bm, int cm, int a_log, int d_skip) {
    const auto& uv = val(u);
    const std::int64_t T = uv.rows();
    const int I = static_cast<int>(uv.cols());
    const int N = static_cast<int>(val(bm).cols());
    if (val(dlt).shape != uv.shape) throw ShapeError("ssm_scan: delta shape");
    if (val(bm).rows() != T || val(cm).rows() != T || val(cm).cols() != N)
      throw ShapeError("ssm_scan: b/c shape");
    if (val(a_log).numel() != static_cast<std::int64_t>(I) * N || val(d_skip).numel() != I)
      throw ShapeError("ssm_scan: a_log/d_skip shape");

    Tensor<R> out({T, I});
    auto h_all = std::make_shared<std::vector<R>>(static_cast<std::size_t>(T) * I * N);
    std::vector<R> h_work;
    kern::ssm_scan_forward(uv.data(), val(dlt).data(), val(bm).data(), val(cm).data(),
                           val(a_log).data(), val(d_skip).data(), out.data(), h_all->data(), h_work,
                           T, I, N);

    return record({u, dlt, bm, cm, a_log, d_skip}, std::move(out),
                  [u, dlt, bm, cm, a_log, d_skip, h_all, T, I, N](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& uv2 = t.val(u).v;
      const auto& dv = t.val(dlt).v;
      const auto& bv = t.val(bm).v;
      const auto& cv = t.val(cm).v;
      const auto& av = t.val(a_log).v;
      const auto& sv = t.val(d_skip).v;
      const auto& h = *h_all;

      const bool nu = t.needs_grad(u), nd = t.needs_grad(dlt), nb = t.needs_grad(bm),
                 nc = t.needs_grad(cm), na = t.needs_grad(a_log), ns = t.needs_grad(d_skip);
      R* gu = nu ? t.grad(u).v.data() : nullptr;
      R* gd = nd ? t.grad(dlt).v.data() : nullptr;
      R* gb = nb ? t.grad(bm).v.data() : nullptr;
      R* gc = nc ? t.grad(cm).v.data() : nullptr;
      R* ga = na ? t.grad(a_log).v.data() : nullptr;
      R* gs = ns ? t.grad(d_skip).v.data() : nullptr;

      std::vector<R> gh(static_cast<std::size_t>(I) * N, R(0));
      for (std::int64_t ti = T - 1; ti >= 0; --ti) {
        const R* ut = uv2.data() + ti * I;
        const R* dt = dv.data() + ti * I;
        const R* bt = bv.data() + ti * N;
        const R* ct = cv.data() + ti * N;
        const R* ht = h.data() + ti * static_cast<std::int64_t>(I) * N;
        const R* hprev = ti > 0 ? h.data() + (ti - 1) * static_cast<std::int64_t>(I) * N : nullptr;
        for (int i = 0; i < I; ++i) {
          const R gy = g[ti * I + i];
          const R di = dt[i];
          const R ui = ut[i];
          R* ghi = gh.data() + static_cast<std::size_t>(i) * N;
          const R* hti = ht + static_cast<std::size_t>(i) * N;
          const R* hpi = hprev ? hprev + static_cast<std::size_t>(i) * N : nullptr;
          const R* ali = av.data() + static_cast<std::size_t>(i) * N;

          if (gs) gs[i] += gy * ui;
          R gui = gy * sv[i];
          R gdi = R(0);
          for (int n = 0; n < N; ++n) {
            if (gc) gc[ti * N + n] += gy * hti[n];
            R ghn = ghi[n] + gy * ct[n];
            const R A = -std::exp(ali[n]);
            const R abar = std::exp(di * A);
            const R hp = hpi ? hpi[n] : R(0);
            const R dabar = ghn * hp;
            gdi += dabar * abar * A;
            if (ga) ga[static_cast<std::size_t>(i) * N + n] += dabar * abar * di * A;
            if (gb) gb[ti * N + n] += ghn * di * ui;
            gdi += ghn * bt[n] * ui;
            gui += ghn * di * bt[n];
            ghi[n] = ghn * abar;
          }
          if (gu) gu[ti * I + i] += gui;
          if (gd) gd[ti * I + i] += gdi;
        }
      }
    });
  }

  // Mean cross-entropy of softmax(logits) against integer labels. Returns a
  // scalar node; saved probabilities drive the (softmax - onehot) backward.
  int softmax_cross_entropy(int logits, std::vector<int> labels) {
    const auto& lv = val(logits);
    const std::int64_t n = lv.rows();
    const int K = static_cast<int>(lv.cols());
    if (static_cast<std::int64_t>(labels.size()) != n)
      throw ShapeError("softmax_cross_entropy: label count");
    for (int y : labels)
      if (y < 0 || y >= K) throw ShapeError("softmax_cross_entropy: label out of range");
    if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");

    auto probs = std::make_shared<std::vector<R>>(lv.v.size());
    R loss = R(0);
    for (std::int64_t r = 0; r < n; ++r) {
      const R* row = lv.data() + r * K;
      R mx = row[0];
      for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
      R z = R(0);
      for (int k = 0; k < K; ++k) z += std::exp(row[k] - mx);
      for (int k = 0; k < K; ++k) (*probs)[r * K + k] = std::exp(row[k] - mx) / z;
      loss -= std::log(std::max((*probs)[r * K + labels[static_cast<std::size_t>(r)]],
                                std::numeric_limits<R>::min()));
    }
    loss /= static_cast<R>(n);
    Tensor<R> out({1});
    out.v[0] = loss;
    auto labels_ptr = std::make_shared<std::vector<int>>(std::move(labels));
    return record({logits}, std::move(out), [logits, probs, labels_ptr, n, K](Tape& t, int self) {
      const R go = t.nodes_[self].grad.v[0];
      auto& gl = t.grad(logits).v;
      const R inv = go / static_cast<R>(n);
      for (std::int64_t r = 0; r < n; ++r)
        for (int k = 0; k < K; ++k) {
          R p = (*probs)[r * K + k];
          R y = (k == (*labels_ptr)[static_cast<std::size_t>(r)]) ? R(1) : R(0);
          gl[r * K + k] += inv * (p - y);
        }
    });
  }

  // Single-layer LSTM over (T, in) inputs from a zero state; returns (T, H).
  int lstm_scan(int x, int w_ih, int w_hh, int b) {
    const auto& xv = val(x);
    const std::int64_t T = xv.rows();
    const int in = static_cast<int>(xv.cols());
    const auto& wih = val(w_ih);
    const auto& whh = val(w_hh);
    if (wih.shape.size() != 2 || wih.shape[1] != in) throw ShapeError("lstm_scan: w_ih shape");
    const int H4 = static_cast<int>(wih.shape[0]);
    if (H4 % 4 != 0) throw ShapeError("lstm_scan: w_ih rows must be 4*H");
    const int H = H4 / 4;
    if (whh.shape != std::vector<std::int64_t>{H4, H}) throw ShapeError("lstm_scan: w_hh shape");
    if (val(b).numel() != H4) throw ShapeError("lstm_scan: bias size");

    Tensor<R> out({T, H});
    auto gates = std::make_shared<std::vector<R>>(static_cast<std::size_t>(T) * H4);  // i,f,g,o activated
    auto c_seq = std::make_shared<std::vector<R>>(static_cast<std::size_t>(T) * H);
    {
      std::vector<R> z(H4), hprev(H, R(0)), cprev(H, R(0));
      for (std::int64_t t = 0; t < T; ++t) {
        kern::linear_forward(xv.data() + t * in, wih.data(), val(b).data(), z.data(), 1, in, H4);
        for (int r = 0; r < H4; ++r) {
          const R* wr = whh.data() + static_cast<std::size_t>(r) * H;
          R acc = z[r];
          for (int j = 0; j < H; ++j) acc += wr[j] * hprev[j];
          z[r] = acc;
        }
        R* gt = gates->data() + t * H4;
        for (int j = 0; j < H; ++j) {
          R ig = sigmoid(z[j]);
          R fg = sigmoid(z[H + j]);
          R gg = std::tanh(z[2 * H + j]);
          R og = sigmoid(z[3 * H + j]);
          gt[j] = ig;
          gt[H + j] = fg;
          gt[2 * H + j] = gg;
          gt[3 * H + j] = og;
          R c = fg * cprev[j] + ig * gg;
          (*c_seq)[t * H + j] = c;
          R h = og * std::tanh(c);
          out.v[t * H + j] = h;
          hprev[j] = h;
          cprev[j] = c;
        }
      }
    }
    int out_id = record({x, w_ih, w_hh, b}, std::move(out),
                        [x, w_ih, w_hh, b, gates, c_seq, T, in, H](Tape& t, int self) {
      const auto& g = t.nodes_[self].grad.v;
      const auto& h_seq = t.nodes_[self].val.v;
      const auto& xv2 = t.val(x).v;
      const auto& wih2 = t.val(w_ih).v;
      const auto& whh2 = t.val(w_hh).v;
      const int H4 = 4 * H;

      const bool nx = t.needs_grad(x), nwi = t.needs_grad(w_ih), nwh = t.needs_grad(w_hh),
                 nb = t.needs_grad(b);
      R* gx = nx ? t.grad(x).v.data() : nullptr;
      R* gwi = nwi ? t.grad(w_ih).v.data() : nullptr;
      R* gwh = nwh ? t.grad(w_hh).v.data() : nullptr;
      R* gb = nb ? t.grad(b).v.data() : nullptr;

      std::vector<R> gh_next(H, R(0)), gc_next(H, R(0)), dz(H4);
      for (std::int64_t ti = T - 1; ti >= 0; --ti) {
        const R* gt = gates->data() + ti * H4;
        const R* ct = c_seq->data() + ti * H;
        const R* cprev = ti > 0 ? c_seq->data() + (ti - 1) * H : nullptr;
        const R* hprev = ti > 0 ? h_seq.data() + (ti - 1) * H : nullptr;
        for (int j = 0; j < H; ++j) {
          R gh = g[ti * H + j] + gh_next[j];
          R ig = gt[j], fg = gt[H + j], gg = gt[2 * H + j], og = gt[3 * H + j];
          R tc = std::tanh(ct[j]);
          R gc = gc_next[j] + gh * og * (R(1) - tc * tc);
          R go_ = gh * tc;
          R cp = cprev ? cprev[j] : R(0);
          dz[j] = gc * gg * ig * (R(1) - ig);
          dz[H + j] = gc * cp * fg * (R(1) - fg);
          dz[2 * H + j] = gc * ig * (R(1) - gg * gg);
          dz[3 * H + j] = go_ * og * (R(1) - og);
          gc_next[j] = gc * fg;
        }
        for (int r = 0; r < H4; ++r) {
          const R d = dz[r];
          if (gb) gb[r] += d;
          if (gwi) {
            R* row = gwi + static_cast<std::size_t>(r) * in;
            const R* xr = xv2.data() + ti * in;
            for (int j = 0; j < in; ++j) row[j] += d * xr[j];
          }
          if (gx) {
            const R* row = wih2.data() + static_cast<std::size_t>(r) * in;
            for (int j = 0; j < in; ++j) gx[ti * in + j] += d * row[j];
          }
          if (gwh && hprev) {
            R* row = gwh + static_cast<std::size_t>(r) * H;
            for (int j = 0; j < H; ++j) row[j] += d * hprev[j];
          }
        }
        for (int j = 0; j < H; ++j) {
          R acc = R(0);
          for (int r = 0; r < H4; ++r) acc += dz[r] * whh2[static_cast<std::size_t>(r) * H + j];
          gh_next[j] = acc;
        }
      }
    });
    return out_id;
  }

 private:
  int check(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw StateError("tape: invalid node id (backward before forward?)");
    return id;
  }

  Tensor<R>& ensure_grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.v.empty()) {
      n.grad.shape = n.val.shape;
      n.grad.v.assign(n.val.v.size(), R(0));
    }
    return n.grad;
  }

  int push(Tensor<R> v, bool needs, std::function<void(Tape&)> back) {
    nodes_.push_back(Node{std::move(v), {}, needs, std::move(back)});
    return static_cast<int>(nodes_.size()) - 1;
  }

  // Records an op node. `inputs` may contain -1 placeholders (unused optional
  // arguments). The node needs a gradient only if some input does; otherwise
  // the backward closure is dropped and the result acts as a constant.
  int record(std::initializer_list<int> inputs, Tensor<R> out,
             std::function<void(Tape&, int)> back) {
    bool needs = false;
    for (int id : inputs)
      if (id >= 0 && nodes_[static_cast<std::size_t>(check(id))].needs_grad) needs = true;
    if (!needs) return push(std::move(out), false, nullptr);
    // pre-size input grads so backward closures can accumulate freely
    for (int id : inputs)
      if (id >= 0 && nodes_[static_cast<std::size_t>(id)].needs_grad) ensure_grad(id);
    int self = static_cast<int>(nodes_.size());
    return push(std::move(out), true, [self, back = std::move(back)](Tape& t) { back(t, self); });
  }

  std::vector<Node> nodes_;
};

}  // namespace tacmamba
