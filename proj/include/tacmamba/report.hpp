#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tacmamba/baselines.hpp"

// Latency/memory benchmark harness behind `bench-latency`. Streaming kinds
// are timed per step after warming the stream to the target history length;
// full-history kinds are timed per whole-history query. Cells can run in a
// forked child so peak resident memory is attributable per cell and timers
// do not interfere across kinds.

namespace tacmamba {

struct BenchTiming {
  double median_us = 0.0;
  double p99_us = 0.0;
};

// kind is one of: tacmamba, cnn1d, lstm_single, lstm_bi_full, attn_full.
bool bench_kind_is_streaming(const std::string& kind);
const std::vector<std::string>& bench_all_kinds();

BenchTiming bench_streaming(const std::string& kind, std::int64_t history_len, int timed_steps,
                            std::uint64_t seed);
BenchTiming bench_full_history(BaselineKind kind, std::int64_t history_len, int queries,
                               std::uint64_t seed);

struct BenchRow {
  std::string kind;
  std::int64_t length = 0;
  double median_us = 0.0;
  double p99_us = 0.0;
  std::int64_t peak_mem_bytes = 0;  // child peak RSS when isolated, else 0
};

// Runs one (kind, length) cell. With isolate, the measurement happens in a
// forked child and peak_mem_bytes is the child's peak resident set.
BenchRow bench_cell(const std::string& kind, std::int64_t length, int streaming_steps, int queries,
                    std::uint64_t seed, bool isolate);

std::string bench_rows_to_csv(const std::vector<BenchRow>& rows);
inline constexpr const char* kBenchCsvHeader = "kind,length,median_us,p99_us,peak_mem_bytes";

}  // namespace tacmamba
