#include <doctest.h>

#include <random>

#include "tacmamba/ssm.hpp"

using namespace tacmamba;

namespace {

// Vector-backed block weights for direct block-level tests.
struct TestBlock {
  int D, I, N, W;
  std::vector<float> w_in, b_in, w_conv, b_conv, w_delta, b_delta, w_b, w_c, a_log, d_skip, w_out,
      b_out;

  TestBlock(int d, int n, int w) : D(d), I(2 * d), N(n), W(w) {
    w_in.assign(static_cast<std::size_t>(2 * I) * D, 0.0f);
    b_in.assign(2 * I, 0.0f);
    w_conv.assign(static_cast<std::size_t>(I) * W, 0.0f);
    b_conv.assign(I, 0.0f);
    w_delta.assign(static_cast<std::size_t>(I) * I, 0.0f);
    b_delta.assign(I, 0.0f);
    w_b.assign(static_cast<std::size_t>(N) * I, 0.0f);
    w_c.assign(static_cast<std::size_t>(N) * I, 0.0f);
    a_log.assign(static_cast<std::size_t>(I) * N, 0.0f);
    d_skip.assign(I, 0.0f);
    w_out.assign(static_cast<std::size_t>(D) * I, 0.0f);
    b_out.assign(D, 0.0f);
  }

  void randomize(std::uint32_t seed) {
    std::mt19937 rng(seed);
    auto fill = [&](std::vector<float>& v, float k) {
      std::uniform_real_distribution<float> dist(-k, k);
      for (auto& x : v) x = dist(rng);
    };
    fill(w_in, 1.0f / std::sqrt(static_cast<float>(D)));
    fill(w_conv, 0.5f);
    fill(w_delta, 1.0f / std::sqrt(static_cast<float>(I)));
    std::uniform_real_distribution<float> db(-3.5f, -1.5f);
    for (auto& x : b_delta) x = db(rng);
    fill(w_b, 1.0f / std::sqrt(static_cast<float>(I)));
    fill(w_c, 1.0f / std::sqrt(static_cast<float>(I)));
    for (int i = 0; i < I; ++i)
      for (int n = 0; n < N; ++n) a_log[static_cast<std::size_t>(i) * N + n] = std::log(1.0f + n);
    for (auto& x : d_skip) x = 1.0f;
    fill(w_out, 1.0f / std::sqrt(static_cast<float>(I)));
  }

  BlockWeightsView<float> view() const {
    BlockWeightsView<float> v;
    v.d_model = D;
    v.d_inner = I;
    v.n_state = N;
    v.conv_w = W;
    v.w_in = w_in.data();
    v.b_in = b_in.data();
    v.w_conv = w_conv.data();
    v.b_conv = b_conv.data();
    v.w_delta = w_delta.data();
    v.b_delta = b_delta.data();
    v.w_b = w_b.data();
    v.w_c = w_c.data();
    v.a_log = a_log.data();
    v.d_skip = d_skip.data();
    v.w_out = w_out.data();
    v.b_out = b_out.data();
    return v;
  }
};

}  // namespace

TEST_CASE("discretize_a closed-form values") {
  // A = -1 (a_log = 0), delta = 0  ->  a_bar = 1
  std::vector<float> a_log = {0.0f};
  std::vector<float> delta = {0.0f};
  auto ab = discretize_a<float>(a_log, delta, 1, 1);
  CHECK(ab[0] == doctest::Approx(1.0f));

  // A = -1, delta = 0.01  ->  exp(-0.01)
  delta[0] = 0.01f;
  ab = discretize_a<float>(a_log, delta, 1, 1);
  CHECK(ab[0] == doctest::Approx(0.9900498f).epsilon(1e-6));

  // A = -2 (a_log = ln 2), delta = 0.5  ->  exp(-1)
  a_log[0] = std::log(2.0f);
  delta[0] = 0.5f;
  ab = discretize_a<float>(a_log, delta, 1, 1);
  CHECK(ab[0] == doctest::Approx(0.3678794f).epsilon(1e-6));
}

TEST_CASE("discretize_a rejects bad domains") {
  std::vector<float> a_log = {0.0f};
  std::vector<float> nan_delta = {std::numeric_limits<float>::quiet_NaN()};
  CHECK_THROWS_AS(discretize_a<float>(a_log, nan_delta, 1, 1), NumericError);
  std::vector<float> neg_delta = {-0.1f};
  CHECK_THROWS_AS(discretize_a<float>(a_log, neg_delta, 1, 1), NumericError);
  std::vector<float> inf_alog = {std::numeric_limits<float>::infinity()};
  std::vector<float> ok_delta = {0.1f};
  CHECK_THROWS_AS(discretize_a<float>(inf_alog, ok_delta, 1, 1), NumericError);
  std::vector<float> short_delta;
  CHECK_THROWS_AS(discretize_a<float>(a_log, short_delta, 1, 1), ShapeError);
}

TEST_CASE("discretize_a stays in (0,1) for positive steps") {
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> al(-4.0f, 4.0f);
  std::uniform_real_distribution<float> dl(1e-6f, 2.0f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> a_log = {al(rng)};
    std::vector<float> delta = {dl(rng)};
    auto ab = discretize_a<float>(a_log, delta, 1, 1);
    CHECK(ab[0] > 0.0f);
    CHECK(ab[0] < 1.0f);
  }
}

TEST_CASE("discretize_a/b zero-step limit") {
  // delta -> 0: a_bar -> 1 and b_bar -> 0
  std::vector<float> a_log = {0.0f, std::log(3.0f)};
  std::vector<float> delta = {1e-8f};
  auto ab = discretize_a<float>(a_log, delta, 1, 2);
  CHECK(std::fabs(ab[0] - 1.0f) < 1e-7f);
  CHECK(std::fabs(ab[1] - 1.0f) < 1e-7f);
  std::vector<float> b = {3.0f, -5.0f};
  auto bb = discretize_b<float>(b, 1e-8f);
  CHECK(std::fabs(bb[0]) < 1e-7f);
  CHECK(std::fabs(bb[1]) < 1e-7f);
}

TEST_CASE("discretize_b basics") {
  std::vector<float> b = {1.0f, -2.0f};
  auto z = discretize_b<float>(b, 0.0f);
  CHECK(z[0] == 0.0f);
  CHECK(z[1] == 0.0f);
  auto s = discretize_b<float>(std::vector<float>{1.0f}, 0.1f);
  CHECK(s[0] == doctest::Approx(0.1f));
  CHECK_THROWS_AS(discretize_b<float>(b, std::numeric_limits<float>::quiet_NaN()), NumericError);
}

TEST_CASE("euler input discretization tracks exact hold within delta*|A|") {
  // oracle: b_bar_exact = ((exp(delta*A) - 1) / A) * b
  const double b = 1.7;
  for (double A : {-0.1, -0.5, -1.0, -2.0, -5.0}) {
    for (double delta : {1e-4, 1e-3, 1e-2, 2e-2}) {
      if (delta * std::fabs(A) > 0.1) continue;
      double exact = (std::exp(delta * A) - 1.0) / A * b;
      double euler = delta * b;
      double rel = std::fabs(euler - exact) / std::fabs(exact);
      CHECK(rel <= delta * std::fabs(A));
    }
  }
}

TEST_CASE("ssm_step zero dynamics and scalar hand case") {
  SsmState<float> st(1, 1);
  SelectiveParams<float> p;
  p.delta = {1.0f};
  p.b = {0.0f};
  p.c = {1.0f};
  std::vector<float> a_log = {0.0f}, d_skip = {0.0f};
  auto y = ssm_step<float>(st, std::vector<float>{0.0f}, p, a_log, d_skip);
  CHECK(y[0] == 0.0f);
  CHECK(st.h[0] == 0.0f);

  // a_bar = 0.5 via A = -ln2, delta = 1; b_bar = 1 via b = 1; u = 2, c = 1
  SsmState<float> st2(1, 1);
  SelectiveParams<float> p2;
  p2.delta = {1.0f};
  p2.b = {1.0f};
  p2.c = {1.0f};
  std::vector<float> a_log2 = {std::log(std::log(2.0f))};
  auto y2 = ssm_step<float>(st2, std::vector<float>{2.0f}, p2, a_log2, d_skip);
  CHECK(st2.h[0] == doctest::Approx(2.0f).epsilon(1e-6));
  CHECK(y2[0] == doctest::Approx(2.0f).epsilon(1e-6));
}

TEST_CASE("ssm_step shape mismatch is a structural error") {
  SsmState<float> st(2, 3);
  SelectiveParams<float> p;
  p.delta = {0.1f};  // wrong: needs 2
  p.b = {0.0f, 0.0f, 0.0f};
  p.c = {0.0f, 0.0f, 0.0f};
  std::vector<float> a_log(6, 0.0f), d_skip(2, 0.0f);
  CHECK_THROWS_AS(ssm_step<float>(st, std::vector<float>{0.0f, 0.0f}, p, a_log, d_skip), ShapeError);
}

TEST_CASE("iterated step equals scan") {
  const int I = 6, N = 4;
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::uniform_real_distribution<float> dpos(0.001f, 0.2f);
  for (int seed = 0; seed < 5; ++seed) {
    const std::int64_t T = 1024;
    std::vector<float> a_log(static_cast<std::size_t>(I) * N), d_skip(I);
    for (auto& v : a_log) v = dist(rng);
    for (auto& v : d_skip) v = dist(rng);
    std::vector<float> u(T * I);
    for (auto& v : u) v = dist(rng);
    std::vector<SelectiveParams<float>> params(static_cast<std::size_t>(T));
    for (auto& p : params) {
      p.delta.resize(I);
      p.b.resize(N);
      p.c.resize(N);
      for (auto& v : p.delta) v = dpos(rng);
      for (auto& v : p.b) v = dist(rng);
      for (auto& v : p.c) v = dist(rng);
    }
    auto y_scan = ssm_scan<float>(u, params, a_log, d_skip, I, N);

    SsmState<float> st(I, N);
    float max_diff = 0.0f;
    for (std::int64_t t = 0; t < T; ++t) {
      auto y = ssm_step<float>(st, std::span<const float>(u.data() + t * I, I), params[t], a_log,
                               d_skip);
      for (int i = 0; i < I; ++i)
        max_diff = std::max(max_diff, std::fabs(y[i] - y_scan[t * I + i]));
    }
    CHECK(max_diff <= 1e-5f);
  }
}

TEST_CASE("ssm_scan base cases and errors") {
  const int I = 2, N = 2;
  std::vector<float> a_log(4, 0.0f), d_skip(2, 0.5f);
  SelectiveParams<float> p;
  p.delta = {0.1f, 0.2f};
  p.b = {1.0f, -1.0f};
  p.c = {0.3f, 0.7f};
  std::vector<float> u = {1.0f, 2.0f};

  auto y_scan = ssm_scan<float>(u, {p}, a_log, d_skip, I, N);
  SsmState<float> st(I, N);
  auto y_step = ssm_step<float>(st, u, p, a_log, d_skip);
  for (int i = 0; i < I; ++i) CHECK(y_scan[i] == doctest::Approx(y_step[i]));

  // all-zero input -> all-zero output
  std::vector<float> zeros(4 * I, 0.0f);
  std::vector<SelectiveParams<float>> ps(4, p);
  auto y0 = ssm_scan<float>(zeros, ps, a_log, d_skip, I, N);
  for (auto v : y0) CHECK(v == 0.0f);

  // length mismatch
  CHECK_THROWS_AS(ssm_scan<float>(u, ps, a_log, d_skip, I, N), ShapeError);
  CHECK_THROWS_AS(ssm_scan<float>(u, {}, a_log, d_skip, I, N), ShapeError);
}

TEST_CASE("zero-input state norm is non-increasing") {
  const int I = 3, N = 4;
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  SsmState<float> st(I, N);
  for (auto& h : st.h) h = dist(rng);
  std::vector<float> a_log(static_cast<std::size_t>(I) * N), d_skip(I, 0.0f);
  for (auto& v : a_log) v = dist(rng);
  SelectiveParams<float> p;
  p.delta.assign(I, 0.05f);
  p.b.assign(N, 1.0f);
  p.c.assign(N, 0.0f);
  std::vector<float> zero(I, 0.0f);
  double prev = 0.0;
  for (auto h : st.h) prev += h * h;
  for (int t = 0; t < 50; ++t) {
    ssm_step<float>(st, zero, p, a_log, d_skip);
    double norm = 0.0;
    for (auto h : st.h) norm += h * h;
    CHECK(norm <= prev + 1e-12);
    prev = norm;
  }
}

TEST_CASE("selective_projection") {
  TestBlock blk(2, 3, 4);
  const int I = blk.I;
  // zero weights, bias so that softplus(bias) = 0.01
  for (auto& b : blk.b_delta) b = softplus_inverse(0.01f);
  std::vector<float> u(I, 0.0f);
  auto p = selective_projection<float>(u, blk.view());
  for (auto d : p.delta) CHECK(d == doctest::Approx(0.01f).epsilon(1e-5));
  for (auto b : p.b) CHECK(b == 0.0f);
  for (auto c : p.c) CHECK(c == 0.0f);

  // any finite input gives positive delta, and results are bit-deterministic
  blk.randomize(3);
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> dist(-5.0f, 5.0f);
  for (int trial = 0; trial < 50; ++trial) {
    for (auto& v : u) v = dist(rng);
    auto p1 = selective_projection<float>(u, blk.view());
    auto p2 = selective_projection<float>(u, blk.view());
    for (int i = 0; i < I; ++i) {
      CHECK(p1.delta[i] > 0.0f);
      CHECK(p1.delta[i] == p2.delta[i]);
    }
  }
}

TEST_CASE("mamba block: zero weights pass the residual through") {
  TestBlock blk(4, 3, 4);
  BlockState<float> st(blk.I, blk.N, blk.W);
  BlockWork<float> ws;
  std::vector<float> x = {0.5f, -1.0f, 2.0f, 0.25f}, out(4);
  mamba_block_step(st, x.data(), out.data(), blk.view(), ws);
  for (int d = 0; d < 4; ++d) CHECK(out[d] == doctest::Approx(x[d]));
}

TEST_CASE("mamba block: step-by-step equals full-sequence forward") {
  TestBlock blk(6, 4, 4);
  blk.randomize(21);
  const std::int64_t T = 300;
  std::mt19937 rng(22);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> x(T * blk.D), out_seq(T * blk.D);
  for (auto& v : x) v = dist(rng);
  mamba_block_forward(x.data(), out_seq.data(), T, blk.view());

  BlockState<float> st(blk.I, blk.N, blk.W);
  BlockWork<float> ws;
  std::vector<float> out(blk.D);
  float max_diff = 0.0f;
  for (std::int64_t t = 0; t < T; ++t) {
    mamba_block_step(st, x.data() + t * blk.D, out.data(), blk.view(), ws);
    for (int d = 0; d < blk.D; ++d)
      max_diff = std::max(max_diff, std::fabs(out[d] - out_seq[t * blk.D + d]));
  }
  CHECK(max_diff <= 1e-5f);
}

TEST_CASE("block state size is invariant over 1e5 steps") {
  TestBlock blk(4, 4, 4);
  blk.randomize(31);
  BlockState<float> st(blk.I, blk.N, blk.W);
  BlockWork<float> ws;
  std::vector<float> x(blk.D, 0.1f), out(blk.D);
  mamba_block_step(st, x.data(), out.data(), blk.view(), ws);
  const std::size_t size_after_1 = st.allocated_bytes();
  for (int t = 1; t < 100000; ++t) mamba_block_step(st, x.data(), out.data(), blk.view(), ws);
  CHECK(st.allocated_bytes() == size_after_1);
}
