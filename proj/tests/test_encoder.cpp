#include <doctest.h>

#include <random>

#include "tacmamba/encoder.hpp"

using namespace tacmamba;

namespace {

EncoderConfig small_config(int channels = 1) {
  EncoderConfig c;
  c.channels = channels;
  c.d_model = 8;
  c.n_state = 4;
  c.layers = 2;
  c.conv_w = 4;
  c.d_z = 6;
  c.seed = 42;
  return c;
}

std::vector<float> random_seq(std::int64_t n, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = dist(rng);
  return x;
}

}  // namespace

TEST_CASE("encoder_init is deterministic per seed and spreads entropy across seeds") {
  EncoderConfig c = small_config();
  ParamStore<float> a = encoder_init(c);
  ParamStore<float> b = encoder_init(c);
  CHECK(a.values() == b.values());

  c.seed = 43;
  ParamStore<float> d = encoder_init(c);
  CHECK(a.values() != d.values());
}

TEST_CASE("realized state matrix entries are strictly negative") {
  EncoderConfig c = small_config();
  ParamStore<float> ps = encoder_init(c);
  for (int l = 0; l < c.layers; ++l) {
    for (float al : ps.span(block_prefix(l) + "a_log")) {
      float A = -std::exp(al);
      CHECK(std::isfinite(A));
      CHECK(A < 0.0f);
    }
  }
}

TEST_CASE("encoder config validation") {
  EncoderConfig c = small_config();
  c.d_model = 0;
  CHECK_THROWS_AS(c.validate(), ShapeError);
  c = small_config();
  c.revin_alpha = 1.0f;
  CHECK_THROWS_AS(c.validate(), ShapeError);
}

TEST_CASE("revin: constant stream converges to beta") {
  RevinChannelState<float> s;
  const float gamma = 1.3f, beta = 0.4f, alpha = 0.05f, c = 2.5f;
  float y = 0.0f;
  for (int t = 0; t < 2000; ++t) y = revin_normalize(s, c, gamma, beta, alpha);
  CHECK(y == doctest::Approx(beta).epsilon(1e-3));
}

TEST_CASE("revin: denormalize inverts normalize within 1e-6") {
  RevinChannelState<float> s;
  std::mt19937 rng(3);
  std::normal_distribution<float> dist(1.0f, 2.0f);
  const float gamma = 1.7f, beta = -0.3f, alpha = 0.01f;
  for (int t = 0; t < 500; ++t) {
    float x = dist(rng);
    float y = revin_normalize(s, x, gamma, beta, alpha);
    float back = revin_invert(s, y, gamma, beta);
    CHECK(std::fabs(back - x) <= 1e-6f * std::max(1.0f, std::fabs(x)));
  }
}

TEST_CASE("revin: unit affine on fresh stats is the identity up to the variance floor") {
  RevinChannelState<float> s;  // mean 0, var 1
  for (float x : {-2.0f, -0.5f, 0.0f, 1.0f, 3.0f}) {
    float y = revin_apply(s, x, 1.0f, 0.0f);
    CHECK(y == doctest::Approx(x).epsilon(1e-4));
  }
}

TEST_CASE("streaming equals batch encode") {
  for (std::uint32_t seed : {1u, 2u, 3u}) {
    EncoderConfig c = small_config();
    c.seed = seed;
    ParamStore<float> ps = encoder_init(c);
    const std::int64_t T = 256;
    std::vector<float> x = random_seq(T, seed + 100);

    std::vector<float> batch = encoder_encode({x.data(), x.size()}, T, ps, c, true);
    EncoderStreamState st(c);
    float max_diff = 0.0f;
    for (std::int64_t t = 0; t < T; ++t) {
      auto h = encoder_step(st, {&x[static_cast<std::size_t>(t)], 1}, ps);
      for (int d = 0; d < c.h_dim(); ++d)
        max_diff = std::max(max_diff, std::fabs(h[d] - batch[t * c.h_dim() + d]));
    }
    CHECK(max_diff <= 1e-5f);
  }
}

TEST_CASE("encode of a length-1 sequence equals one step from a fresh state") {
  EncoderConfig c = small_config();
  ParamStore<float> ps = encoder_init(c);
  std::vector<float> x = {0.7f};
  auto h_seq = encoder_encode({x.data(), 1}, 1, ps, c, true);
  EncoderStreamState st(c);
  auto h = encoder_step(st, {x.data(), 1}, ps);
  for (int d = 0; d < c.h_dim(); ++d) CHECK(h[d] == doctest::Approx(h_seq[d]));
}

TEST_CASE("zero block weights reduce the encoder to the embedded normalized input") {
  EncoderConfig c = small_config();
  ParamStore<float> ps = encoder_init(c);
  for (int l = 0; l < c.layers; ++l) {
    const std::string p = block_prefix(l);
    for (const char* name : {"w_in", "b_in", "w_conv", "b_conv", "w_delta", "b_delta", "w_b", "w_c",
                             "a_log", "d_skip", "w_out", "b_out"})
      for (auto& v : ps.span(p + name)) v = 0.0f;
  }
  const std::int64_t T = 64;
  std::vector<float> x = random_seq(T, 5);
  auto h_seq = encoder_encode({x.data(), x.size()}, T, ps, c, true);

  auto gamma = ps.span("encoder/revin/gamma");
  auto beta = ps.span("encoder/revin/beta");
  auto ew = ps.span("encoder/embed/w");
  auto eb = ps.span("encoder/embed/b");
  RevinChannelState<float> r;
  for (std::int64_t t = 0; t < T; ++t) {
    float xn = revin_normalize(r, x[static_cast<std::size_t>(t)], gamma[0], beta[0], c.revin_alpha);
    for (int d = 0; d < c.d_model; ++d)
      CHECK(h_seq[t * c.d_model + d] == doctest::Approx(ew[d] * xn + eb[d]).epsilon(1e-6));
  }
}

TEST_CASE("per-instance normalization mode differs from streaming mode on drifting input") {
  EncoderConfig c = small_config();
  ParamStore<float> ps = encoder_init(c);
  const std::int64_t T = 128;
  std::vector<float> x(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) x[static_cast<std::size_t>(t)] = 0.01f * t;
  auto a = encoder_encode({x.data(), x.size()}, T, ps, c, true);
  auto b = encoder_encode({x.data(), x.size()}, T, ps, c, false);
  require_finite(a.data(), a.size(), "streaming-mode output");
  require_finite(b.data(), b.size(), "instance-mode output");
  float diff = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) diff = std::max(diff, std::fabs(a[i] - b[i]));
  CHECK(diff > 1e-4f);
}

TEST_CASE("channel independence: permuting input channels permutes h blocks") {
  EncoderConfig c = small_config(3);
  ParamStore<float> ps = encoder_init(c);
  const std::int64_t T = 50;
  std::vector<float> x = random_seq(T * 3, 17);
  auto h = encoder_encode({x.data(), x.size()}, T, ps, c, true);

  const int perm[3] = {2, 0, 1};
  std::vector<float> xp(x.size());
  for (std::int64_t t = 0; t < T; ++t)
    for (int ch = 0; ch < 3; ++ch) xp[t * 3 + ch] = x[t * 3 + perm[ch]];
  auto hp = encoder_encode({xp.data(), xp.size()}, T, ps, c, true);

  const int D = c.d_model;
  for (std::int64_t t = 0; t < T; ++t)
    for (int ch = 0; ch < 3; ++ch)
      for (int d = 0; d < D; ++d)
        CHECK(hp[t * c.h_dim() + ch * D + d] ==
              doctest::Approx(h[t * c.h_dim() + perm[ch] * D + d]));
}

TEST_CASE("encoder_step rejects channel mismatch; encode rejects empty input") {
  EncoderConfig c = small_config();
  ParamStore<float> ps = encoder_init(c);
  EncoderStreamState st(c);
  std::vector<float> two = {0.0f, 1.0f};
  CHECK_THROWS_AS(encoder_step(st, {two.data(), two.size()}, ps), ShapeError);
  CHECK_THROWS_AS(encoder_encode({two.data(), 0}, 0, ps, c, true), ShapeError);
}

TEST_CASE("stream state size is invariant in time") {
  EncoderConfig c = small_config();
  ParamStore<float> ps = encoder_init(c);
  EncoderStreamState st(c);
  std::vector<float> x = random_seq(5000, 23);
  encoder_step(st, {&x[0], 1}, ps);
  const std::size_t size_at_1 = st.allocated_bytes();
  for (std::int64_t t = 1; t < 5000; ++t) encoder_step(st, {&x[static_cast<std::size_t>(t)], 1}, ps);
  CHECK(st.allocated_bytes() == size_at_1);
  CHECK(st.timestep() == 5000);
}

TEST_CASE("soft prompt projection is linear; identity and zero maps") {
  EncoderConfig c = small_config();
  c.d_z = c.h_dim();
  ParamStore<float> ps = encoder_init(c);
  auto wz = ps.span("encoder/zproj/w");
  std::fill(wz.begin(), wz.end(), 0.0f);
  std::vector<float> h = random_seq(c.h_dim(), 31);
  auto z0 = make_soft_prompt({h.data(), h.size()}, ps, c);
  for (auto v : z0) CHECK(v == 0.0f);

  for (int i = 0; i < c.h_dim(); ++i) wz[static_cast<std::size_t>(i) * c.h_dim() + i] = 1.0f;
  auto zi = make_soft_prompt({h.data(), h.size()}, ps, c);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(zi[i] == doctest::Approx(h[i]));

  // linearity under a random projection
  EncoderConfig c2 = small_config();
  ParamStore<float> ps2 = encoder_init(c2);
  std::vector<float> h1 = random_seq(c2.h_dim(), 32), h2 = random_seq(c2.h_dim(), 33);
  const float a = 0.7f, b = -1.3f;
  std::vector<float> mix(h1.size());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * h1[i] + b * h2[i];
  auto zm = make_soft_prompt({mix.data(), mix.size()}, ps2, c2);
  auto z1 = make_soft_prompt({h1.data(), h1.size()}, ps2, c2);
  auto z2 = make_soft_prompt({h2.data(), h2.size()}, ps2, c2);
  for (std::size_t i = 0; i < zm.size(); ++i)
    CHECK(zm[i] == doctest::Approx(a * z1[i] + b * z2[i]).epsilon(1e-5));
}

TEST_CASE("snapshot semantics") {
  EncoderConfig c = small_config();
  ParamStore<float> ps = encoder_init(c);
  EncoderStreamState st(c);
  CHECK_THROWS_AS(snapshot(st, ps), StateError);

  std::vector<float> x = random_seq(10, 41);
  encoder_step(st, {&x[0], 1}, ps);
  HiddenSnapshot s1 = snapshot(st, ps);
  CHECK(s1.t == 1);
  std::vector<float> s1_h = s1.h;

  encoder_step(st, {&x[1], 1}, ps);
  HiddenSnapshot s2 = snapshot(st, ps);
  CHECK(s2.t == 2);
  CHECK(s1.h == s1_h);  // earlier snapshot untouched
  CHECK(static_cast<int>(s2.z.size()) == c.d_z);

  // reset then identical replay reproduces the trajectory
  EncoderStreamState st2(c);
  for (int t = 0; t < 10; ++t) encoder_step(st2, {&x[static_cast<std::size_t>(t)], 1}, ps);
  auto h_end = std::vector<float>(st2.h_last().begin(), st2.h_last().end());
  st2.reset();
  CHECK(st2.timestep() == 0);
  for (int t = 0; t < 10; ++t) encoder_step(st2, {&x[static_cast<std::size_t>(t)], 1}, ps);
  auto h_replay = std::vector<float>(st2.h_last().begin(), st2.h_last().end());
  CHECK(h_end == h_replay);
}
