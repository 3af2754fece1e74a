#include "tacmamba/phase.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace tacmamba {

int Segmentation::index_at(std::int64_t t) const {
  for (std::size_t k = 0; k < phases.size(); ++k)
    if (t >= phases[k].start && t < phases[k].end) return static_cast<int>(k);
  throw StateError("segmentation: timestep outside segmented range");
}

void Segmentation::validate() const {
  if (phases.empty()) throw ShapeError("segmentation: no phases");
  std::int64_t expect = 0;
  for (const auto& s : phases) {
    if (s.start != expect || s.end <= s.start)
      throw ShapeError("segmentation: phases must be contiguous and non-empty");
    expect = s.end;
  }
  if (expect != total) throw ShapeError("segmentation: phases must cover [0, total)");
}

std::vector<float> gradient_magnitude(std::span<const float> x_seq, std::int64_t T, int channels,
                                      int smooth_w) {
  if (T < 2) throw ShapeError("gradient_magnitude: need at least two samples");
  if (smooth_w < 1 || smooth_w % 2 == 0) throw ShapeError("gradient_magnitude: W must be odd and >= 1");
  if (static_cast<std::int64_t>(x_seq.size()) != T * channels)
    throw ShapeError("gradient_magnitude: size mismatch");

  std::vector<float> d(static_cast<std::size_t>(T));
  for (std::int64_t t = 1; t < T; ++t) {
    float acc = 0.0f;
    for (int c = 0; c < channels; ++c)
      acc += std::fabs(x_seq[t * channels + c] - x_seq[(t - 1) * channels + c]);
    d[static_cast<std::size_t>(t)] = acc;
  }
  d[0] = d[1];

  if (smooth_w == 1) return d;
  std::vector<float> g(static_cast<std::size_t>(T));
  const int half = smooth_w / 2;
  for (std::int64_t t = 0; t < T; ++t) {
    std::int64_t lo = std::max<std::int64_t>(0, t - half);
    std::int64_t hi = std::min<std::int64_t>(T - 1, t + half);
    float acc = 0.0f;
    for (std::int64_t s = lo; s <= hi; ++s) acc += d[static_cast<std::size_t>(s)];
    g[static_cast<std::size_t>(t)] = acc / static_cast<float>(hi - lo + 1);
  }
  return g;
}

SegmentationParams default_segmentation_params(std::span<const float> x_seq, std::int64_t T,
                                               int channels, float rate_hz, float window_s) {
  auto n = static_cast<std::int64_t>(std::llround(static_cast<double>(window_s) * rate_hz));
  n = std::clamp<std::int64_t>(n, 2, T);
  double mean = 0.0;
  for (std::int64_t t = 0; t < n; ++t) {
    float s = 0.0f;
    for (int c = 0; c < channels; ++c) s += x_seq[t * channels + c];
    mean += s;
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (std::int64_t t = 0; t < n; ++t) {
    float s = 0.0f;
    for (int c = 0; c < channels; ++c) s += x_seq[t * channels + c];
    var += (s - mean) * (s - mean);
  }
  var /= static_cast<double>(n > 1 ? n - 1 : 1);
  float sigma = std::max(static_cast<float>(std::sqrt(var)), 1e-4f);

  SegmentationParams p;
  p.theta_hi = 5.0f * sigma;
  p.theta_lo = 2.0f * sigma;
  p.min_len = 10;
  p.smooth_w = 5;
  return p;
}

Segmentation segment_phases(std::span<const float> x_seq, std::int64_t T, int channels,
                            const SegmentationParams& params) {
  if (!(params.theta_hi >= params.theta_lo) || !(params.theta_lo > 0.0f))
    throw ShapeError("segment_phases: need theta_hi >= theta_lo > 0");
  if (params.min_len < 1) throw ShapeError("segment_phases: min_len must be >= 1");
  std::vector<float> g = gradient_magnitude(x_seq, T, channels, params.smooth_w);

  Segmentation seg;
  seg.total = T;
  SegmentKind cur = SegmentKind::idle;
  std::int64_t cur_start = 0;
  int below = 0;
  for (std::int64_t t = 0; t < T; ++t) {
    if (cur == SegmentKind::idle) {
      if (g[static_cast<std::size_t>(t)] >= params.theta_hi) {
        if (t > cur_start) seg.phases.push_back({cur_start, t, SegmentKind::idle});
        cur = SegmentKind::contact;
        cur_start = t;
        below = 0;
      }
    } else {
      if (g[static_cast<std::size_t>(t)] < params.theta_lo) {
        if (++below == params.min_len) {
          std::int64_t idle_start = t - params.min_len + 1;
          seg.phases.push_back({cur_start, idle_start, SegmentKind::contact});
          cur = SegmentKind::idle;
          cur_start = idle_start;
          below = 0;
        }
      } else {
        below = 0;
      }
    }
  }
  seg.phases.push_back({cur_start, T, cur});

  // debounce: fold runts into their predecessor, first segment into successor
  auto coalesce = [&] {
    for (std::size_t k = 1; k < seg.phases.size();) {
      if (seg.phases[k].kind == seg.phases[k - 1].kind) {
        seg.phases[k - 1].end = seg.phases[k].end;
        seg.phases.erase(seg.phases.begin() + static_cast<std::ptrdiff_t>(k));
      } else {
        ++k;
      }
    }
  };
  bool changed = true;
  while (changed && seg.phases.size() > 1) {
    changed = false;
    for (std::size_t k = 0; k < seg.phases.size(); ++k) {
      if (seg.phases[k].length() < params.min_len) {
        if (k > 0) {
          seg.phases[k - 1].end = seg.phases[k].end;
        } else {
          seg.phases[1].start = 0;
        }
        seg.phases.erase(seg.phases.begin() + static_cast<std::ptrdiff_t>(k));
        coalesce();
        changed = true;
        break;
      }
    }
  }
  seg.validate();
  return seg;
}

std::vector<std::int64_t> detected_onsets(const Segmentation& seg) {
  std::vector<std::int64_t> out;
  for (const auto& s : seg.phases)
    if (s.kind == SegmentKind::contact) out.push_back(s.start);
  return out;
}

double boundary_recall(const std::vector<std::int64_t>& detected,
                       const std::vector<std::int64_t>& truth, std::int64_t tol) {
  if (truth.empty()) return 1.0;
  int matched = 0;
  for (auto t : truth)
    for (auto d : detected)
      if (std::llabs(d - t) <= tol) {
        ++matched;
        break;
      }
  return static_cast<double>(matched) / static_cast<double>(truth.size());
}

std::string segmentation_to_json_string(const Segmentation& seg) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["phases"] = nlohmann::json::array();
  for (const auto& s : seg.phases)
    j["phases"].push_back({{"start", s.start}, {"end", s.end}, {"kind", to_string(s.kind)}});
  return j.dump(2);
}

std::vector<std::int64_t> phase_uniform_sample(const Segmentation& seg, int n, std::mt19937& rng) {
  if (seg.phases.empty()) throw StateError("phase_uniform_sample: empty segmentation");
  if (n < 1) throw ShapeError("phase_uniform_sample: n must be >= 1");
  std::uniform_int_distribution<int> pick_phase(0, seg.count() - 1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (auto& t : out) {
    const Segment& s = seg.phases[static_cast<std::size_t>(pick_phase(rng))];
    std::uniform_int_distribution<std::int64_t> pick_t(s.start, s.end - 1);
    t = pick_t(rng);
  }
  return out;
}

std::vector<std::int64_t> uniform_sample(std::int64_t T, int n, std::mt19937& rng) {
  if (T < 1) throw ShapeError("uniform_sample: T must be >= 1");
  if (n < 1) throw ShapeError("uniform_sample: n must be >= 1");
  std::uniform_int_distribution<std::int64_t> pick(0, T - 1);
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (auto& t : out) t = pick(rng);
  return out;
}

int pair_label(const Segmentation& seg, std::int64_t i, std::int64_t j) {
  int pi = seg.index_at(i), pj = seg.index_at(j);
  if (pi == pj) return 1;
  return pi < pj ? 0 : 2;
}

std::vector<PairSample> relation_balanced_pairs(const Segmentation& seg, int n, std::mt19937& rng) {
  if (n < 3 || n % 3 != 0) throw ShapeError("relation_balanced_pairs: n must be a positive multiple of 3");
  if (seg.count() < 2)
    throw StateError("relation_balanced_pairs: need at least two phases to form ordered pairs");
  const int per_class = n / 3;
  std::uniform_int_distribution<int> pick_phase(0, seg.count() - 1);
  auto pick_in = [&](int k) {
    const Segment& s = seg.phases[static_cast<std::size_t>(k)];
    std::uniform_int_distribution<std::int64_t> pick_t(s.start, s.end - 1);
    return pick_t(rng);
  };

  std::vector<PairSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int label : {0, 1, 2}) {
    for (int m = 0; m < per_class; ++m) {
      if (label == 1) {
        int k = pick_phase(rng);
        out.push_back({pick_in(k), pick_in(k), 1});
      } else {
        int a = pick_phase(rng);
        int b = pick_phase(rng);
        while (b == a) b = pick_phase(rng);
        int lo = std::min(a, b), hi = std::max(a, b);
        if (label == 0)
          out.push_back({pick_in(lo), pick_in(hi), 0});
        else
          out.push_back({pick_in(hi), pick_in(lo), 2});
      }
    }
  }
  return out;
}

}  // namespace tacmamba
