#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tacmamba/common.hpp"

// Offline phase tooling: gradient-magnitude segmentation of force
// trajectories into idle/contact spans, plus the three samplers used by
// training (standard uniform, phase-uniform, relation-balanced ternary
// pairs).

namespace tacmamba {

enum class SegmentKind { idle, contact };
inline const char* to_string(SegmentKind k) { return k == SegmentKind::idle ? "idle" : "contact"; }

struct Segment {
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive
  SegmentKind kind = SegmentKind::idle;
  std::int64_t length() const { return end - start; }
};

struct Segmentation {
  std::vector<Segment> phases;
  std::int64_t total = 0;

  int count() const { return static_cast<int>(phases.size()); }
  int index_at(std::int64_t t) const;
  void validate() const;  // contiguous, non-overlapping, covering [0, total)
};

// Channel-summed absolute first difference smoothed by a centered moving
// average of odd width W; g[0] is copied from g[1].
std::vector<float> gradient_magnitude(std::span<const float> x_seq, std::int64_t T, int channels,
                                      int smooth_w);

struct SegmentationParams {
  float theta_hi = 0.1f;
  float theta_lo = 0.04f;
  int min_len = 10;
  int smooth_w = 5;
};

// Thresholds from the idle-noise level of the first `window_s` seconds:
// theta_hi = 5 sigma, theta_lo = 2 sigma.
SegmentationParams default_segmentation_params(std::span<const float> x_seq, std::int64_t T,
                                               int channels, float rate_hz, float window_s = 0.5f);

// Hysteresis segmentation: enter contact when g >= theta_hi, leave once g has
// stayed below theta_lo for min_len consecutive samples; segments shorter
// than min_len are merged into their predecessor.
Segmentation segment_phases(std::span<const float> x_seq, std::int64_t T, int channels,
                            const SegmentationParams& params);

// Starts of contact segments, for scoring against ground-truth onsets.
std::vector<std::int64_t> detected_onsets(const Segmentation& seg);

// Fraction of truth onsets with a detected onset within +-tol samples.
double boundary_recall(const std::vector<std::int64_t>& detected,
                       const std::vector<std::int64_t>& truth, std::int64_t tol);

// Sidecar-schema JSON ({"schema_version", "phases":[{start,end,kind}]}).
std::string segmentation_to_json_string(const Segmentation& seg);

// Pick a phase uniformly among the K phases, then a timestep uniformly inside
// it, so every phase carries 1/K of the probability mass.
std::vector<std::int64_t> phase_uniform_sample(const Segmentation& seg, int n, std::mt19937& rng);

// Plain i.i.d. uniform over [0, T).
std::vector<std::int64_t> uniform_sample(std::int64_t T, int n, std::mt19937& rng);

// Ternary temporal relation of two timesteps under a segmentation:
// same phase -> 1, phase(i) earlier -> 0, phase(i) later -> 2.
int pair_label(const Segmentation& seg, std::int64_t i, std::int64_t j);

struct PairSample {
  std::int64_t i = 0;
  std::int64_t j = 0;
  int label = 0;  // 0: i earlier, 1: same phase, 2: i later
};

// Exactly n/3 pairs per relation class; endpoint timesteps are drawn
// phase-uniformly inside the chosen phases. Requires n divisible by 3 and at
// least two phases.
std::vector<PairSample> relation_balanced_pairs(const Segmentation& seg, int n, std::mt19937& rng);

}  // namespace tacmamba
