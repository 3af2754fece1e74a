#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tacmamba/encoder.hpp"
#include "tacmamba/sim.hpp"

// Dual-rate harness: a fast loop steps the encoder at fast_hz and publishes
// (t, h_t, z_tac) snapshots through a single-writer exchange cell; a slow
// planner loop reads the latest snapshot on demand. The simulated clock runs
// both loops on one deterministic timeline; the wall clock uses two threads
// and real time.

namespace tacmamba {

// Published envelope: snapshot payload plus publication metadata and a
// checksum over everything, so readers can prove they never saw a torn value.
struct CellSnapshot {
  std::int64_t t = 0;
  std::uint64_t pub_count = 0;
  double pub_time_s = 0.0;
  std::vector<float> h, z;
  std::uint64_t checksum = 0;

  std::uint64_t compute_checksum() const;
  bool checksum_ok() const { return checksum == compute_checksum(); }
};

// Seqlock-protected latest-value cell. Exactly one writer; readers retry
// while a write is in flight, so the writer never waits on them. Payload
// buffers are sized at construction and never reallocate.
class SnapshotCell {
 public:
  SnapshotCell(int h_dim, int z_dim);

  // Single-writer only.
  void publish(const HiddenSnapshot& snap, double pub_time_s);

  // Copies the latest complete snapshot; empty until the first publish.
  std::optional<CellSnapshot> read_latest() const;
  bool read_latest(CellSnapshot& out) const;

  std::uint64_t publish_count() const { return pubs_.load(std::memory_order_relaxed); }

 private:
  const int h_dim_, z_dim_;
  std::atomic<std::uint64_t> seq_{0};
  std::atomic<std::uint64_t> pubs_{0};
  // payload: written only between odd/even transitions of seq_
  std::int64_t t_ = 0;
  std::uint64_t count_ = 0;
  double time_s_ = 0.0;
  std::uint64_t checksum_ = 0;
  std::vector<float> h_, z_;
};

struct LatencyHistogram {
  static const std::vector<double>& bucket_upper_us();
  std::vector<std::int64_t> counts;

  LatencyHistogram() : counts(bucket_upper_us().size(), 0) {}
  void add(double us);
  std::int64_t total() const;
  std::string to_csv() const;  // header "bucket_upper_us,count"
};

struct RunReport {
  double fast_hz = 0.0, slow_hz = 0.0, duration_s = 0.0;
  bool simulated = true;
  std::int64_t fast_steps = 0;
  std::int64_t slow_queries = 0;
  std::int64_t deadline_misses = 0;
  std::vector<double> miss_times_s;
  LatencyHistogram step_latency;
  std::vector<double> staleness_ms;  // one entry per successful planner read
  std::int64_t torn_reads = 0;

  std::string to_json_string() const;
};

struct DualRateConfig {
  double fast_hz = 100.0;
  double slow_hz = 1.0;
  double duration_s = 60.0;
  bool simulated_clock = true;
  // Simulated-clock only: pretended encoder-step latency, seconds.
  double synthetic_step_latency_s = 0.0;
  int abort_after_consecutive_misses = 10;
};

// Runs the harness over a prerecorded (or freshly generated) source
// trajectory. `planner_store` may be null; when present the slow loop runs
// the planner stub on each snapshot it reads.
RunReport run_dual_rate(const ParamStore<float>& encoder_store, const EncoderConfig& cfg,
                        const LabeledTrajectory& source, const DualRateConfig& rc,
                        const ParamStore<float>* planner_store = nullptr);

}  // namespace tacmamba
