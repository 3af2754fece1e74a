#include "tacmamba/runtime.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "tacmamba/train.hpp"

namespace tacmamba {

std::uint64_t CellSnapshot::compute_checksum() const {
  std::uint64_t cs = fnv1a(&t, sizeof(t));
  cs = fnv1a(&pub_count, sizeof(pub_count), cs);
  cs = fnv1a(&pub_time_s, sizeof(pub_time_s), cs);
  cs = fnv1a(h.data(), h.size() * sizeof(float), cs);
  cs = fnv1a(z.data(), z.size() * sizeof(float), cs);
  return cs;
}

SnapshotCell::SnapshotCell(int h_dim, int z_dim)
    : h_dim_(h_dim), z_dim_(z_dim), h_(static_cast<std::size_t>(h_dim), 0.0f),
      z_(static_cast<std::size_t>(z_dim), 0.0f) {
  if (h_dim < 1 || z_dim < 1) throw ShapeError("snapshot cell: dims must be >= 1");
}

void SnapshotCell::publish(const HiddenSnapshot& snap, double pub_time_s) {
  if (static_cast<int>(snap.h.size()) != h_dim_ || static_cast<int>(snap.z.size()) != z_dim_)
    throw ShapeError("snapshot cell: payload dims do not match cell");

  CellSnapshot env;
  env.t = snap.t;
  env.pub_count = pubs_.load(std::memory_order_relaxed) + 1;
  env.pub_time_s = pub_time_s;
  env.h = snap.h;
  env.z = snap.z;
  std::uint64_t cs = env.compute_checksum();

  std::uint64_t s = seq_.load(std::memory_order_relaxed);
  seq_.store(s + 1, std::memory_order_relaxed);  // odd: write in flight
  std::atomic_thread_fence(std::memory_order_release);
  t_ = env.t;
  count_ = env.pub_count;
  time_s_ = env.pub_time_s;
  std::copy(env.h.begin(), env.h.end(), h_.begin());
  std::copy(env.z.begin(), env.z.end(), z_.begin());
  checksum_ = cs;
  seq_.store(s + 2, std::memory_order_release);  // even: stable
  pubs_.store(env.pub_count, std::memory_order_release);
}

bool SnapshotCell::read_latest(CellSnapshot& out) const {
  out.h.resize(static_cast<std::size_t>(h_dim_));
  out.z.resize(static_cast<std::size_t>(z_dim_));
  for (;;) {
    std::uint64_t s1 = seq_.load(std::memory_order_acquire);
    if (s1 == 0) return false;  // no snapshot yet
    if (s1 & 1) continue;       // writer in flight, retry
    out.t = t_;
    out.pub_count = count_;
    out.pub_time_s = time_s_;
    std::copy(h_.begin(), h_.end(), out.h.begin());
    std::copy(z_.begin(), z_.end(), out.z.begin());
    out.checksum = checksum_;
    std::atomic_thread_fence(std::memory_order_acquire);
    std::uint64_t s2 = seq_.load(std::memory_order_relaxed);
    if (s1 == s2) return true;
  }
}

std::optional<CellSnapshot> SnapshotCell::read_latest() const {
  CellSnapshot out;
  if (!read_latest(out)) return std::nullopt;
  return out;
}

const std::vector<double>& LatencyHistogram::bucket_upper_us() {
  static const std::vector<double> uppers = {1,    2,    5,     10,    20,    50,     100,   200,
                                             500,  1000, 2000,  5000,  10000, 20000,  50000, 100000,
                                             std::numeric_limits<double>::infinity()};
  return uppers;
}

void LatencyHistogram::add(double us) {
  const auto& uppers = bucket_upper_us();
  for (std::size_t i = 0; i < uppers.size(); ++i) {
    if (us <= uppers[i]) {
      ++counts[i];
      return;
    }
  }
}

std::int64_t LatencyHistogram::total() const {
  std::int64_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

std::string LatencyHistogram::to_csv() const {
  std::string out = "bucket_upper_us,count\n";
  const auto& uppers = bucket_upper_us();
  for (std::size_t i = 0; i < uppers.size(); ++i) {
    if (std::isinf(uppers[i]))
      out += "inf," + std::to_string(counts[i]) + "\n";
    else
      out += std::to_string(static_cast<long long>(uppers[i])) + "," + std::to_string(counts[i]) + "\n";
  }
  return out;
}

std::string RunReport::to_json_string() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["fast_hz"] = fast_hz;
  j["slow_hz"] = slow_hz;
  j["duration_s"] = duration_s;
  j["clock"] = simulated ? "simulated" : "wall";
  j["fast_steps"] = fast_steps;
  j["slow_queries"] = slow_queries;
  j["deadline_misses"] = deadline_misses;
  j["miss_times_s"] = miss_times_s;
  j["staleness_ms"] = staleness_ms;
  j["torn_reads"] = torn_reads;
  nlohmann::json hist = nlohmann::json::array();
  const auto& uppers = LatencyHistogram::bucket_upper_us();
  for (std::size_t i = 0; i < uppers.size(); ++i) {
    hist.push_back({{"upper_us", std::isinf(uppers[i]) ? -1.0 : uppers[i]},
                    {"count", step_latency.counts[i]}});
  }
  j["step_latency_histogram"] = hist;
  return j.dump(2);
}

namespace {

// Coarse features for the planner stub from raw source samples: per-channel
// mean/max over the last completed one-second window before sample t.
std::vector<float> coarse_at(const LabeledTrajectory& src, std::int64_t t) {
  const int C = static_cast<int>(src.channels);
  const auto sps = static_cast<std::int64_t>(std::llround(src.rate_hz));
  std::vector<float> out(2 * static_cast<std::size_t>(C), 0.0f);
  std::int64_t b = (sps > 0) ? (t / sps) * sps : 0;
  if (b < sps) return out;
  for (int c = 0; c < C; ++c) {
    float mean = 0.0f, mx = -std::numeric_limits<float>::infinity();
    for (std::int64_t s = b - sps; s < b; ++s) {
      float v = src.samples[s * C + c];
      mean += v;
      mx = std::max(mx, v);
    }
    out[2 * c] = mean / static_cast<float>(sps);
    out[2 * c + 1] = mx;
  }
  return out;
}

void run_planner_stub(const CellSnapshot& snap, const LabeledTrajectory& src, std::int64_t sample_t,
                      const ParamStore<float>* planner) {
  if (!planner || !planner->has("planner/w")) return;
  std::vector<float> coarse = coarse_at(src, sample_t);
  (void)planner_forward({snap.z.data(), snap.z.size()}, {coarse.data(), coarse.size()}, *planner);
}

}  // namespace

RunReport run_dual_rate(const ParamStore<float>& encoder_store, const EncoderConfig& cfg,
                        const LabeledTrajectory& source, const DualRateConfig& rc,
                        const ParamStore<float>* planner_store) {
  if (!(rc.fast_hz > rc.slow_hz) || !(rc.slow_hz > 0.0))
    throw SchemaError("run_dual_rate: need fast_hz > slow_hz > 0");
  if (!(rc.duration_s > 0.0)) throw SchemaError("run_dual_rate: duration must be > 0");
  const auto n_fast = static_cast<std::int64_t>(std::llround(rc.duration_s * rc.fast_hz));
  const auto n_slow = static_cast<std::int64_t>(std::llround(rc.duration_s * rc.slow_hz));
  if (source.length() < n_fast)
    throw SchemaError("run_dual_rate: source trajectory shorter than the run (" +
                      std::to_string(source.length()) + " < " + std::to_string(n_fast) + " samples)");
  if (static_cast<int>(source.channels) != cfg.channels)
    throw ShapeError("run_dual_rate: source channels do not match encoder");

  RunReport rep;
  rep.fast_hz = rc.fast_hz;
  rep.slow_hz = rc.slow_hz;
  rep.duration_s = rc.duration_s;
  rep.simulated = rc.simulated_clock;

  EncoderStreamState state(cfg);
  SnapshotCell cell(cfg.h_dim(), cfg.d_z);
  const double fast_period = 1.0 / rc.fast_hz;

  if (rc.simulated_clock) {
    // One logical timeline; events processed in time order, publish first on
    // ties so a query at time q sees every publish with pub_time <= q.
    const double lat = rc.synthetic_step_latency_s;
    std::int64_t k = 0, m = 0;
    int consecutive = 0;
    CellSnapshot snap;
    while (k < n_fast || m < n_slow) {
      const double t_pub = (k < n_fast) ? static_cast<double>(k) * fast_period + lat
                                        : std::numeric_limits<double>::infinity();
      const double t_q = (m < n_slow) ? static_cast<double>(m) / rc.slow_hz
                                      : std::numeric_limits<double>::infinity();
      if (t_pub <= t_q) {
        std::span<const float> x(source.samples.data() + k * cfg.channels,
                                 static_cast<std::size_t>(cfg.channels));
        encoder_step(state, x, encoder_store);
        cell.publish(snapshot(state, encoder_store), t_pub);
        rep.step_latency.add(lat * 1e6);
        ++rep.fast_steps;
        if (lat > fast_period) {
          ++rep.deadline_misses;
          rep.miss_times_s.push_back(static_cast<double>(k) * fast_period);
          if (++consecutive >= rc.abort_after_consecutive_misses)
            throw StateError("run_dual_rate: encoder step exceeded the deadline " +
                             std::to_string(consecutive) + " consecutive times at t=" +
                             std::to_string(static_cast<double>(k) * fast_period) + "s");
        } else {
          consecutive = 0;
        }
        ++k;
      } else {
        ++rep.slow_queries;
        if (cell.read_latest(snap)) {
          if (!snap.checksum_ok()) ++rep.torn_reads;
          rep.staleness_ms.push_back((t_q - snap.pub_time_s) * 1e3);
          std::int64_t sample_t = std::min<std::int64_t>(snap.t - 1, source.length() - 1);
          run_planner_stub(snap, source, sample_t, planner_store);
        }
        ++m;
      }
    }
    return rep;
  }

  // Wall clock: two threads, steady_clock timeline.
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  auto seconds_since_start = [&start] {
    return std::chrono::duration<double>(clock::now() - start).count();
  };

  struct FastSide {
    std::int64_t steps = 0;
    std::int64_t misses = 0;
    std::vector<double> miss_times;
    LatencyHistogram hist;
  } fast;
  struct SlowSide {
    std::int64_t queries = 0;
    std::int64_t torn = 0;
    std::vector<double> staleness_ms;
  } slow;

  std::thread fast_thread([&] {
    for (std::int64_t k = 0; k < n_fast; ++k) {
      const auto target = start + std::chrono::duration_cast<clock::duration>(
                                      std::chrono::duration<double>(k * fast_period));
      std::this_thread::sleep_until(target);
      const auto t0 = clock::now();
      std::span<const float> x(source.samples.data() + k * cfg.channels,
                               static_cast<std::size_t>(cfg.channels));
      encoder_step(state, x, encoder_store);
      cell.publish(snapshot(state, encoder_store), seconds_since_start());
      const auto t1 = clock::now();
      fast.hist.add(std::chrono::duration<double, std::micro>(t1 - t0).count());
      ++fast.steps;
      if (t1 > target + std::chrono::duration_cast<clock::duration>(
                            std::chrono::duration<double>(fast_period))) {
        ++fast.misses;
        fast.miss_times.push_back(std::chrono::duration<double>(t1 - start).count());
      }
    }
  });

  std::thread slow_thread([&] {
    CellSnapshot snap;
    for (std::int64_t m = 0; m < n_slow; ++m) {
      const auto target = start + std::chrono::duration_cast<clock::duration>(
                                      std::chrono::duration<double>(m / rc.slow_hz));
      std::this_thread::sleep_until(target);
      ++slow.queries;
      if (cell.read_latest(snap)) {
        if (!snap.checksum_ok()) ++slow.torn;
        double now_s = seconds_since_start();
        slow.staleness_ms.push_back((now_s - snap.pub_time_s) * 1e3);
        std::int64_t sample_t = std::min<std::int64_t>(snap.t - 1, source.length() - 1);
        run_planner_stub(snap, source, sample_t, planner_store);
      }
    }
  });

  fast_thread.join();
  slow_thread.join();

  rep.fast_steps = fast.steps;
  rep.deadline_misses = fast.misses;
  rep.miss_times_s = std::move(fast.miss_times);
  rep.step_latency = std::move(fast.hist);
  rep.slow_queries = slow.queries;
  rep.torn_reads = slow.torn;
  rep.staleness_ms = std::move(slow.staleness_ms);
  return rep;
}

}  // namespace tacmamba
