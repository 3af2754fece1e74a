#include "tacmamba/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <random>

#include <json.hpp>

namespace tacmamba {

using nlohmann::json;

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::button_press: return "button_press";
    case ScenarioKind::sequential_buttons: return "sequential_buttons";
    case ScenarioKind::pick_place_counting: return "pick_place_counting";
    case ScenarioKind::idle_hold: return "idle_hold";
  }
  return "?";
}

const char* to_string(PhaseKind k) {
  switch (k) {
    case PhaseKind::idle: return "idle";
    case PhaseKind::approach: return "approach";
    case PhaseKind::ramp: return "ramp";
    case PhaseKind::snap: return "snap";
    case PhaseKind::hold: return "hold";
    case PhaseKind::release: return "release";
    case PhaseKind::transport: return "transport";
  }
  return "?";
}

const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::snap: return "snap";
    case EventKind::release: return "release";
  }
  return "?";
}

ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "button_press") return ScenarioKind::button_press;
  if (s == "sequential_buttons") return ScenarioKind::sequential_buttons;
  if (s == "pick_place_counting") return ScenarioKind::pick_place_counting;
  if (s == "idle_hold") return ScenarioKind::idle_hold;
  throw SchemaError("unknown scenario kind: " + s);
}

PhaseKind phase_kind_from_string(const std::string& s) {
  for (int i = 0; i < kPhaseKindCount; ++i)
    if (s == to_string(static_cast<PhaseKind>(i))) return static_cast<PhaseKind>(i);
  throw SchemaError("unknown phase kind: " + s);
}

EventKind event_kind_from_string(const std::string& s) {
  if (s == "snap") return EventKind::snap;
  if (s == "release") return EventKind::release;
  throw SchemaError("unknown event kind: " + s);
}

void ScenarioConfig::validate() const {
  if (!(rate_hz > 0.0f)) throw SchemaError("scenario: rate_hz must be > 0");
  if (!(duration_s > 0.0f)) throw SchemaError("scenario: duration_s must be > 0");
  if (!(peak_force_n > snap_drop_n) || snap_drop_n < 0.0f)
    throw SchemaError("scenario: need peak_force_n > snap_drop_n >= 0");
  if (noise_sigma_n < 0.0f) throw SchemaError("scenario: noise_sigma_n must be >= 0");
  if (!(gain_pad > gain_tip) || !(gain_tip > 0.0f))
    throw SchemaError("scenario: need gain_pad > gain_tip > 0");
  if (kind == ScenarioKind::sequential_buttons && presses < 1)
    throw SchemaError("scenario: presses must be >= 1");
  if (kind == ScenarioKind::pick_place_counting && cycles < 1)
    throw SchemaError("scenario: cycles must be >= 1");
}

int LabeledTrajectory::phase_index_at(std::int64_t t) const {
  for (std::size_t k = 0; k < phases.size(); ++k)
    if (t >= phases[k].start && t < phases[k].end) return static_cast<int>(k);
  throw StateError("phase_index_at: index outside labeled range");
}

PhaseKind LabeledTrajectory::phase_kind_at(std::int64_t t) const {
  return phases[static_cast<std::size_t>(phase_index_at(t))].kind;
}

void LabeledTrajectory::validate() const {
  if (channels == 0) throw ShapeError("trajectory: zero channels");
  if (samples.size() % channels != 0) throw ShapeError("trajectory: sample count not divisible by channels");
  if (!labeled()) return;
  std::int64_t expect = 0;
  for (const auto& p : phases) {
    if (p.start != expect || p.end <= p.start)
      throw ShapeError("trajectory: phase spans must be contiguous and non-empty");
    expect = p.end;
  }
  if (expect != length()) throw ShapeError("trajectory: phase spans must cover the full length");
  for (const auto& e : events)
    if (e.t < 0 || e.t >= length()) throw ShapeError("trajectory: event marker out of range");
}

PressureReading pressure_map(float applied_force_n, Region region, float gain_tip, float gain_pad) {
  if (!std::isfinite(applied_force_n)) throw NumericError("pressure_map: non-finite force");
  PressureReading r;
  float f = applied_force_n;
  if (f < 0.0f) {
    f = 0.0f;
    r.clamped = true;
  } else if (f > 10.0f) {
    f = 10.0f;
    r.clamped = true;
  }
  r.reading = (region == Region::fingerpad ? gain_pad : gain_tip) * f;
  return r;
}

namespace {

// One scripted span of the contact-force curve. `shape` maps the local sample
// index to a force in newtons.
struct PlannedSpan {
  PhaseKind kind;
  std::int64_t n;
  float (*shape)(std::int64_t local, std::int64_t n, const ScenarioConfig& c, float base);
  float base;  // shape-specific level (plateau force, ramp target, ...)
};

float shape_zero(std::int64_t, std::int64_t, const ScenarioConfig&, float) { return 0.0f; }

float shape_plateau(std::int64_t, std::int64_t, const ScenarioConfig&, float base) { return base; }

// Ease-out rise 0 -> base with a sharp initial slope, like a stiff contact
// engaging: f(u) = base * (1 - (1-u)^2).
float shape_ramp_up(std::int64_t local, std::int64_t n, const ScenarioConfig&, float base) {
  float u = static_cast<float>(local + 1) / static_cast<float>(n);
  float om = 1.0f - u;
  return base * (1.0f - om * om);
}

// Mirror of shape_ramp_up: base -> 0 with a sharp initial slope.
float shape_ramp_down(std::int64_t local, std::int64_t n, const ScenarioConfig&, float base) {
  float u = static_cast<float>(local + 1) / static_cast<float>(n);
  float om = 1.0f - u;
  return base * om * om;
}

// Post-click transient: the force sits at (peak - drop) with a decaying
// vibration on top. At local = 0 the vibration term is zero, so the jump from
// the ramp's final value (peak) down to here is the instant drop.
float shape_snap(std::int64_t local, std::int64_t, const ScenarioConfig& c, float) {
  float s = static_cast<float>(local) / c.rate_hz;
  float amp = 0.6f * c.snap_drop_n;
  float vib = amp * std::exp(-s / c.vib_decay_s) *
              std::sin(2.0f * static_cast<float>(M_PI) * c.vib_freq_hz * s);
  return (c.peak_force_n - c.snap_drop_n) + vib;
}

std::int64_t span_samples(float seconds, float rate_hz) {
  auto n = static_cast<std::int64_t>(std::llround(static_cast<double>(seconds) * rate_hz));
  return n < 1 ? 1 : n;
}

}  // namespace

LabeledTrajectory generate(const ScenarioConfig& config) {
  config.validate();
  const float rate = config.rate_hz;
  const auto total = static_cast<std::int64_t>(std::llround(static_cast<double>(config.duration_s) * rate));

  std::vector<PlannedSpan> plan;
  std::vector<std::pair<std::int64_t, EventKind>> plan_events;  // offset within plan, kind

  auto push = [&](PhaseKind kind, float seconds, decltype(PlannedSpan::shape) shape, float base) {
    plan.push_back({kind, span_samples(seconds, rate), shape, base});
  };
  auto planned_len = [&] {
    std::int64_t n = 0;
    for (const auto& s : plan) n += s.n;
    return n;
  };
  auto mark_event = [&](EventKind k) {
    // marks the first sample of the next span to be pushed
    plan_events.emplace_back(planned_len(), k);
  };

  const float fp = config.peak_force_n;
  switch (config.kind) {
    case ScenarioKind::idle_hold:
      break;
    case ScenarioKind::button_press:
      push(PhaseKind::idle, 0.8f, shape_zero, 0);
      push(PhaseKind::approach, 1.0f, shape_zero, 0);
      push(PhaseKind::ramp, 0.6f, shape_ramp_up, fp);
      mark_event(EventKind::snap);
      push(PhaseKind::snap, 0.18f, shape_snap, 0);
      push(PhaseKind::hold, 1.2f, shape_plateau, fp - config.snap_drop_n);
      push(PhaseKind::release, 0.12f, shape_ramp_down, fp - config.snap_drop_n);
      break;
    case ScenarioKind::sequential_buttons:
      push(PhaseKind::idle, 0.8f, shape_zero, 0);
      for (int p = 0; p < config.presses; ++p) {
        push(PhaseKind::approach, 0.7f, shape_zero, 0);
        push(PhaseKind::ramp, 0.5f, shape_ramp_up, fp);
        mark_event(EventKind::snap);
        push(PhaseKind::snap, 0.18f, shape_snap, 0);
        push(PhaseKind::hold, 0.5f, shape_plateau, fp - config.snap_drop_n);
        push(PhaseKind::release, 0.12f, shape_ramp_down, fp - config.snap_drop_n);
      }
      break;
    case ScenarioKind::pick_place_counting: {
      const float grasp = 0.75f * fp;
      push(PhaseKind::idle, 0.8f, shape_zero, 0);
      for (int cyc = 0; cyc < config.cycles; ++cyc) {
        push(PhaseKind::approach, 0.6f, shape_zero, 0);
        push(PhaseKind::ramp, 0.4f, shape_ramp_up, grasp);
        push(PhaseKind::transport, 1.2f, shape_plateau, grasp);
        mark_event(EventKind::release);
        push(PhaseKind::release, 0.15f, shape_ramp_down, grasp);
        push(PhaseKind::idle, 0.45f, shape_zero, 0);
      }
      break;
    }
  }

  std::int64_t used = planned_len();
  if (used + (config.kind == ScenarioKind::idle_hold ? 0 : 1) > total)
    throw SchemaError("scenario: duration_s too short for the " + std::string(to_string(config.kind)) +
                      " phase template (need >= " +
                      std::to_string(static_cast<double>(used + 1) / rate) + " s)");
  if (total - used > 0) plan.push_back({PhaseKind::idle, total - used, shape_zero, 0});

  LabeledTrajectory traj;
  traj.channels = 1;
  traj.rate_hz = rate;
  traj.samples.resize(static_cast<std::size_t>(total));

  std::mt19937 rng(static_cast<std::uint32_t>(config.seed ^ (config.seed >> 32)));
  std::normal_distribution<float> noise(0.0f, 1.0f);

  std::int64_t t = 0;
  for (const auto& span : plan) {
    PhaseSpan ps{t, t + span.n, span.kind};
    // coalesce adjacent idle spans so phase indices stay meaningful
    if (!traj.phases.empty() && traj.phases.back().kind == span.kind)
      traj.phases.back().end = ps.end;
    else
      traj.phases.push_back(ps);
    for (std::int64_t local = 0; local < span.n; ++local, ++t) {
      float force = span.shape(local, span.n, config, span.base);
      float reading = pressure_map(force, config.region, config.gain_tip, config.gain_pad).reading;
      if (config.noise_sigma_n > 0.0f) reading += config.noise_sigma_n * noise(rng);
      reading += config.drift_n_per_s * (static_cast<float>(t) / rate);
      traj.samples[static_cast<std::size_t>(t)] = reading;
    }
  }
  for (auto [off, kind] : plan_events) traj.events.push_back({off, kind});
  traj.validate();
  return traj;
}

std::vector<std::int64_t> ground_truth_onsets(const LabeledTrajectory& traj) {
  std::vector<std::int64_t> onsets;
  bool prev_dynamic = false;
  for (const auto& p : traj.phases) {
    bool dyn = is_dynamic_kind(p.kind);
    if (dyn && !prev_dynamic) onsets.push_back(p.start);
    prev_dynamic = dyn;
  }
  return onsets;
}

int event_count_up_to(const LabeledTrajectory& traj, std::int64_t t) {
  int n = 0;
  for (const auto& e : traj.events)
    if (e.t <= t) ++n;
  return n;
}

// ---------------------------------------------------------------------------
// File IO

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct BinReader {
  std::FILE* f;
  std::uint64_t offset = 0;
  void bytes(void* p, std::size_t n, const char* what) {
    if (std::fread(p, 1, n, f) != n)
      throw ParseError(std::string("truncated trajectory file reading ") + what, offset);
    offset += n;
  }
  template <typename T>
  T get(const char* what) {
    T v;
    bytes(&v, sizeof(T), what);
    return v;
  }
};

}  // namespace

std::string sidecar_path(const std::string& trajectory_path) {
  std::filesystem::path p(trajectory_path);
  p.replace_extension(".json");
  return p.string();
}

void write_trajectory(const LabeledTrajectory& traj, const std::string& path) {
  if (traj.length() == 0) throw ShapeError("write_trajectory: empty trajectory");
  traj.validate();

  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for write: " + path);
  std::FILE* f = fp.get();
  auto put = [&](const void* p, std::size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw IoError("short write: " + path);
  };
  put("TACM", 4);
  std::uint32_t version = kTrajectoryVersion;
  put(&version, 4);
  put(&traj.channels, 4);
  put(&traj.rate_hz, 4);
  std::uint64_t len = static_cast<std::uint64_t>(traj.length());
  put(&len, 8);
  put(traj.samples.data(), traj.samples.size() * sizeof(float));
  if (std::fflush(f) != 0) throw IoError("flush failed: " + path);

  json side;
  side["schema_version"] = 1;
  side["rate_hz"] = traj.rate_hz;
  side["phases"] = json::array();
  for (const auto& p : traj.phases)
    side["phases"].push_back({{"start", p.start}, {"end", p.end}, {"kind", to_string(p.kind)}});
  side["events"] = json::array();
  for (const auto& e : traj.events)
    side["events"].push_back({{"t", e.t}, {"kind", to_string(e.kind)}});
  std::ofstream out(sidecar_path(path));
  if (!out) throw IoError("cannot open for write: " + sidecar_path(path));
  out << side.dump(2) << "\n";
}

LabeledTrajectory read_trajectory(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  BinReader r{fp.get()};

  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, "TACM", 4) != 0) throw ParseError("bad magic, expected TACM", 0);
  auto version = r.get<std::uint32_t>("version");
  if (version != kTrajectoryVersion)
    throw VersionError("unsupported trajectory version " + std::to_string(version));

  LabeledTrajectory traj;
  traj.channels = r.get<std::uint32_t>("channels");
  if (traj.channels == 0 || traj.channels > 4096) throw ParseError("implausible channel count", r.offset - 4);
  traj.rate_hz = r.get<float>("rate_hz");
  auto len = r.get<std::uint64_t>("length");
  if (len == 0 || len > (1ull << 40)) throw ParseError("implausible length", r.offset - 8);
  traj.samples.resize(static_cast<std::size_t>(len) * traj.channels);
  r.bytes(traj.samples.data(), traj.samples.size() * sizeof(float), "samples");

  std::string side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw ParseError(std::string("sidecar JSON: ") + e.what(), static_cast<std::uint64_t>(e.byte));
    }
    for (const auto& p : j.value("phases", json::array()))
      traj.phases.push_back({p.at("start").get<std::int64_t>(), p.at("end").get<std::int64_t>(),
                             phase_kind_from_string(p.at("kind").get<std::string>())});
    for (const auto& e : j.value("events", json::array()))
      traj.events.push_back(
          {e.at("t").get<std::int64_t>(), event_kind_from_string(e.at("kind").get<std::string>())});
  }
  traj.validate();
  return traj;
}

}  // namespace tacmamba
