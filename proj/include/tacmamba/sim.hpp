#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tacmamba/common.hpp"

// Synthetic tactile trajectory generator standing in for the hardware
// fingertip. Scenarios emit 100Hz 1D force curves with ground-truth phase
// spans and event markers; the sensor model is a linear per-region pressure
// gain plus white noise and optional drift.

namespace tacmamba {

enum class ScenarioKind { button_press, sequential_buttons, pick_place_counting, idle_hold };
enum class Region { fingertip, fingerpad };

enum class PhaseKind { idle, approach, ramp, snap, hold, release, transport };
inline constexpr int kPhaseKindCount = 7;

enum class EventKind { snap, release };

const char* to_string(ScenarioKind k);
const char* to_string(PhaseKind k);
const char* to_string(EventKind k);
ScenarioKind scenario_kind_from_string(const std::string& s);
PhaseKind phase_kind_from_string(const std::string& s);
EventKind event_kind_from_string(const std::string& s);

// Phases where the force is in motion (contact transitions). Static plateaus
// and free motion are not dynamic even when the finger is touching.
inline bool is_dynamic_kind(PhaseKind k) {
  return k == PhaseKind::ramp || k == PhaseKind::snap || k == PhaseKind::release;
}
// The sparse, high-value instants: snap-through and release transients.
inline bool is_critical_kind(PhaseKind k) {
  return k == PhaseKind::snap || k == PhaseKind::release;
}

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::button_press;
  int presses = 3;  // sequential_buttons
  int cycles = 3;   // pick_place_counting
  float rate_hz = 100.0f;
  float duration_s = 10.0f;
  float peak_force_n = 4.0f;
  float snap_drop_n = 1.5f;
  float vib_freq_hz = 15.0f;
  float vib_decay_s = 0.05f;
  float noise_sigma_n = 0.02f;
  float drift_n_per_s = 0.0f;
  Region region = Region::fingertip;
  float gain_tip = 1.0f;
  float gain_pad = 1.6f;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PhaseSpan {
  std::int64_t start = 0;
  std::int64_t end = 0;  // exclusive
  PhaseKind kind = PhaseKind::idle;
};

struct EventMarker {
  std::int64_t t = 0;
  EventKind kind = EventKind::snap;
};

struct LabeledTrajectory {
  std::uint32_t channels = 1;
  float rate_hz = 100.0f;
  std::vector<float> samples;  // (T x channels), channel-interleaved
  std::vector<PhaseSpan> phases;
  std::vector<EventMarker> events;

  std::int64_t length() const {
    return channels == 0 ? 0 : static_cast<std::int64_t>(samples.size() / channels);
  }
  bool labeled() const { return !phases.empty(); }
  int phase_index_at(std::int64_t t) const;
  PhaseKind phase_kind_at(std::int64_t t) const;
  // Throws unless the phase spans are contiguous, non-overlapping and cover
  // [0, T) exactly (when labels are present).
  void validate() const;
};

LabeledTrajectory generate(const ScenarioConfig& config);

struct PressureReading {
  float reading = 0.0f;
  bool clamped = false;  // input force was outside the characterized 0..10 N range
};

// Linear sensor map: reading = gain(region) * force, fingerpad gain higher.
PressureReading pressure_map(float applied_force_n, Region region, float gain_tip = 1.0f,
                             float gain_pad = 1.6f);

// Starts of maximal runs of dynamic-kind phases; these are the ground-truth
// contact onsets a segmenter is scored against.
std::vector<std::int64_t> ground_truth_onsets(const LabeledTrajectory& traj);

// Number of events with marker index <= t.
int event_count_up_to(const LabeledTrajectory& traj, std::int64_t t);

// Trajectory container: "TACM" magic, u32 version, u32 channels, f32 rate_hz,
// u64 length, then channel-interleaved little-endian f32 samples. Labels and
// event markers live in a sidecar JSON next to the file (same basename,
// .json extension) with schema {schema_version, rate_hz, phases:[{start,end,
// kind}], events:[{t,kind}]}.
inline constexpr std::uint32_t kTrajectoryVersion = 1;

std::string sidecar_path(const std::string& trajectory_path);
void write_trajectory(const LabeledTrajectory& traj, const std::string& path);
LabeledTrajectory read_trajectory(const std::string& path);

}  // namespace tacmamba
