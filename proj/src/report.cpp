#include "tacmamba/report.hpp"

#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <random>

#include "tacmamba/encoder.hpp"

namespace tacmamba {

bool bench_kind_is_streaming(const std::string& kind) {
  if (kind == "tacmamba") return true;
  return baseline_is_streaming(baseline_kind_from_string(kind));
}

const std::vector<std::string>& bench_all_kinds() {
  static const std::vector<std::string> kinds = {"tacmamba", "cnn1d", "lstm_single", "lstm_bi_full",
                                                 "attn_full"};
  return kinds;
}

namespace {

std::vector<float> random_signal(std::int64_t n, std::uint64_t seed) {
  std::mt19937 rng(static_cast<std::uint32_t>(seed) ^ 0x177ea5u);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  std::vector<float> x(static_cast<std::size_t>(n));
  for (auto& v : x) v = dist(rng);
  return x;
}

BenchTiming summarize(std::vector<double>& us) {
  BenchTiming t;
  t.median_us = median_of(us);
  t.p99_us = percentile_of(us, 0.99);
  return t;
}

}  // namespace

BenchTiming bench_streaming(const std::string& kind, std::int64_t history_len, int timed_steps,
                            std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::vector<float> x = random_signal(history_len + timed_steps, seed);
  std::vector<double> us;
  us.reserve(static_cast<std::size_t>(timed_steps));

  if (kind == "tacmamba") {
    EncoderConfig cfg;
    cfg.seed = seed;
    ParamStore<float> ps = encoder_init(cfg);
    EncoderStreamState st(cfg);
    for (std::int64_t t = 0; t < history_len; ++t)
      encoder_step(st, {&x[static_cast<std::size_t>(t)], 1}, ps);
    for (int t = 0; t < timed_steps; ++t) {
      auto t0 = clock::now();
      encoder_step(st, {&x[static_cast<std::size_t>(history_len + t)], 1}, ps);
      auto t1 = clock::now();
      us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
    }
    return summarize(us);
  }

  BaselineKind bk = baseline_kind_from_string(kind);
  BaselineWeights w = baseline_init(bk, seed);
  BaselineStreamState st(bk);
  for (std::int64_t t = 0; t < history_len; ++t)
    baseline_step(st, x[static_cast<std::size_t>(t)], w);
  for (int t = 0; t < timed_steps; ++t) {
    auto t0 = clock::now();
    baseline_step(st, x[static_cast<std::size_t>(history_len + t)], w);
    auto t1 = clock::now();
    us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return summarize(us);
}

BenchTiming bench_full_history(BaselineKind kind, std::int64_t history_len, int queries,
                               std::uint64_t seed) {
  using clock = std::chrono::steady_clock;
  std::vector<float> x = random_signal(history_len, seed);
  BaselineWeights w = baseline_init(kind, seed);
  std::vector<double> us;
  us.reserve(static_cast<std::size_t>(queries));
  (void)baseline_query_full(w, {x.data(), x.size()});  // warm caches
  for (int q = 0; q < queries; ++q) {
    auto t0 = clock::now();
    (void)baseline_query_full(w, {x.data(), x.size()});
    auto t1 = clock::now();
    us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return summarize(us);
}

namespace {

BenchTiming bench_cell_inline(const std::string& kind, std::int64_t length, int streaming_steps,
                              int queries, std::uint64_t seed) {
  if (bench_kind_is_streaming(kind)) return bench_streaming(kind, length, streaming_steps, seed);
  return bench_full_history(baseline_kind_from_string(kind), length, queries, seed);
}

}  // namespace

BenchRow bench_cell(const std::string& kind, std::int64_t length, int streaming_steps, int queries,
                    std::uint64_t seed, bool isolate) {
  BenchRow row;
  row.kind = kind;
  row.length = length;

  if (!isolate) {
    BenchTiming t = bench_cell_inline(kind, length, streaming_steps, queries, seed);
    row.median_us = t.median_us;
    row.p99_us = t.p99_us;
    return row;
  }

  int fds[2];
  if (pipe(fds) != 0) throw IoError("bench: pipe failed");
  pid_t pid = fork();
  if (pid < 0) {
    close(fds[0]);
    close(fds[1]);
    throw IoError("bench: fork failed");
  }
  if (pid == 0) {
    close(fds[0]);
    double out[2] = {0.0, 0.0};
    int status = 0;
    try {
      BenchTiming t = bench_cell_inline(kind, length, streaming_steps, queries, seed);
      out[0] = t.median_us;
      out[1] = t.p99_us;
    } catch (...) {
      status = 1;
    }
    ssize_t n = write(fds[1], out, sizeof(out));
    (void)n;
    close(fds[1]);
    _exit(status);
  }
  close(fds[1]);
  double out[2] = {0.0, 0.0};
  ssize_t got = read(fds[0], out, sizeof(out));
  close(fds[0]);
  int status = 0;
  struct rusage ru{};
  wait4(pid, &status, 0, &ru);
  if (got != static_cast<ssize_t>(sizeof(out)) || !WIFEXITED(status) || WEXITSTATUS(status) != 0)
    throw StateError("bench: isolated cell failed for kind " + kind);
  row.median_us = out[0];
  row.p99_us = out[1];
  row.peak_mem_bytes = static_cast<std::int64_t>(ru.ru_maxrss) * 1024;
  return row;
}

std::string bench_rows_to_csv(const std::vector<BenchRow>& rows) {
  std::string csv = std::string(kBenchCsvHeader) + "\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%lld,%.3f,%.3f,%lld\n", r.kind.c_str(),
                  static_cast<long long>(r.length), r.median_us, r.p99_us,
                  static_cast<long long>(r.peak_mem_bytes));
    csv += buf;
  }
  return csv;
}

}  // namespace tacmamba
