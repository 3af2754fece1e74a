#include "tacmamba/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace tacmamba {

using nlohmann::json;

void MetricsLog::write_jsonl(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for write: " + path);
  for (const auto& line : lines) out << line << "\n";
}

std::vector<float> discriminator_forward(std::span<const float> h_i, std::span<const float> h_j,
                                         const ParamStore<float>& ps) {
  if (h_i.size() != h_j.size()) throw ShapeError("discriminator_forward: feature dims differ");
  const auto& w1v = ps.view("discr/w1");
  const int in = static_cast<int>(w1v.shape[1]);
  if (static_cast<int>(h_i.size() + h_j.size()) != in)
    throw ShapeError("discriminator_forward: feature dim does not match weights");
  std::vector<float> hcat(static_cast<std::size_t>(in));
  std::copy(h_i.begin(), h_i.end(), hcat.begin());
  std::copy(h_j.begin(), h_j.end(), hcat.begin() + static_cast<std::ptrdiff_t>(h_i.size()));
  std::vector<float> a1(kDiscrHidden), logits(3);
  kern::linear_forward(hcat.data(), ps.span("discr/w1").data(), ps.span("discr/b1").data(), a1.data(),
                       1, in, kDiscrHidden);
  for (auto& v : a1) v = silu(v);
  kern::linear_forward(a1.data(), ps.span("discr/w2").data(), ps.span("discr/b2").data(),
                       logits.data(), 1, kDiscrHidden, 3);
  return logits;
}

namespace {

int argmax3(const float* p, int k) {
  int best = 0;
  for (int i = 1; i < k; ++i)
    if (p[i] > p[best]) best = i;
  return best;
}

struct SegmentedTraj {
  const LabeledTrajectory* traj = nullptr;
  Segmentation seg;
};

std::vector<SegmentedTraj> segment_usable(const std::vector<LabeledTrajectory>& trajectories) {
  std::vector<SegmentedTraj> usable;
  for (const auto& t : trajectories) {
    if (t.length() < 2) continue;
    auto params = default_segmentation_params({t.samples.data(), t.samples.size()}, t.length(),
                                              static_cast<int>(t.channels), t.rate_hz);
    Segmentation seg = segment_phases({t.samples.data(), t.samples.size()}, t.length(),
                                      static_cast<int>(t.channels), params);
    if (seg.count() >= 2) usable.push_back({&t, std::move(seg)});
  }
  return usable;
}

// Graph from a sequence + pair batch to the scalar ternary loss. Returns
// (loss node, logits node).
std::pair<int, int> build_pair_loss(Tape<float>& tp, StoreBinding<float>& bind,
                                    const SequenceModel& model, std::span<const float> x_seq,
                                    std::int64_t T, const std::vector<PairSample>& pairs) {
  int h = model.build_h_seq(tp, bind, x_seq, T);
  std::vector<std::int64_t> idx_i, idx_j;
  std::vector<int> labels;
  idx_i.reserve(pairs.size());
  idx_j.reserve(pairs.size());
  labels.reserve(pairs.size());
  for (const auto& p : pairs) {
    idx_i.push_back(p.i);
    idx_j.push_back(p.j);
    labels.push_back(p.label);
  }
  int hi = tp.gather_rows(h, std::move(idx_i));
  int hj = tp.gather_rows(h, std::move(idx_j));
  int logits = build_discriminator_logits(tp, bind, hi, hj);
  int loss = tp.softmax_cross_entropy(logits, std::move(labels));
  return {loss, logits};
}

double eval_pairs_accuracy(const std::vector<SegmentedTraj>& items,
                           const std::vector<std::vector<PairSample>>& pair_sets,
                           const SequenceModel& model, const ParamStore<float>& store) {
  std::int64_t correct = 0, total = 0;
  const int F = model.feature_dim();
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& t = *items[k].traj;
    std::vector<float> h =
        model.encode_plain({t.samples.data(), t.samples.size()}, t.length(), store);
    for (const auto& p : pair_sets[k]) {
      std::span<const float> hi(h.data() + p.i * F, static_cast<std::size_t>(F));
      std::span<const float> hj(h.data() + p.j * F, static_cast<std::size_t>(F));
      auto logits = discriminator_forward(hi, hj, store);
      correct += (argmax3(logits.data(), 3) == p.label) ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace

float loss_pre(const std::vector<float>& x_seq, std::int64_t T, const std::vector<PairSample>& pairs,
               const SequenceModel& model, const ParamStore<float>& store) {
  if (pairs.empty()) throw ShapeError("loss_pre: empty pair batch");
  Tape<float> tp;
  StoreBinding<float> bind(tp, store);
  auto [loss, logits] = build_pair_loss(tp, bind, model, {x_seq.data(), x_seq.size()}, T, pairs);
  (void)logits;
  return tp.val(loss).v[0];
}

Stage1Result pretrain_stage1(const std::vector<LabeledTrajectory>& trajectories,
                             const SequenceModel& model, const Stage1Config& cfg) {
  if (cfg.batch_pairs < 3 || cfg.batch_pairs % 3 != 0)
    throw ShapeError("stage1: batch_pairs must be a positive multiple of 3");
  auto usable = segment_usable(trajectories);
  if (usable.empty())
    throw StateError("stage1: unsegmentable data, no trajectory has two or more phases");

  std::vector<SegmentedTraj> train, hold;
  for (std::size_t i = 0; i < usable.size(); ++i) {
    if (cfg.holdout_every > 0 && (i % cfg.holdout_every) == static_cast<std::size_t>(cfg.holdout_every) - 1)
      hold.push_back(usable[i]);
    else
      train.push_back(usable[i]);
  }
  if (hold.empty()) {
    hold.push_back(train.back());
    if (train.size() > 1) train.pop_back();
  }
  if (train.empty()) train = hold;

  Stage1Result result;
  model.add_params(result.store);
  model.init_params(result.store);
  {
    std::mt19937 drng(static_cast<std::uint32_t>(cfg.seed) ^ 0x9e3779b9u);
    add_discriminator_params(result.store, model.feature_dim());
    init_discriminator_params(result.store, model.feature_dim(), drng);
  }
  ParamStore<float>& store = result.store;

  std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed));
  std::mt19937 erng(static_cast<std::uint32_t>(cfg.seed) ^ 0x517cc1b7u);
  int eval_n = std::max(3, cfg.eval_pairs_per_traj - cfg.eval_pairs_per_traj % 3);
  std::vector<std::vector<PairSample>> hold_pairs;
  for (const auto& it : hold) hold_pairs.push_back(relation_balanced_pairs(it.seg, eval_n, erng));

  AdamState<float> adam(store.size());
  std::vector<float> grads(store.size(), 0.0f);

  for (int s = 0; s < cfg.max_steps; ++s) {
    const SegmentedTraj& item =
        train[std::uniform_int_distribution<std::size_t>(0, train.size() - 1)(rng)];
    auto pairs = relation_balanced_pairs(item.seg, cfg.batch_pairs, rng);

    Tape<float> tp;
    StoreBinding<float> bind(tp, store);
    const auto& t = *item.traj;
    auto [loss, logits] =
        build_pair_loss(tp, bind, model, {t.samples.data(), t.samples.size()}, t.length(), pairs);
    float lv = tp.val(loss).v[0];
    if (s == 0) result.initial_loss = lv;

    const auto& lt = tp.val(logits);
    int correct = 0;
    for (std::size_t r = 0; r < pairs.size(); ++r)
      correct += (argmax3(lt.data() + r * 3, 3) == pairs[r].label) ? 1 : 0;
    double train_acc = static_cast<double>(correct) / static_cast<double>(pairs.size());

    std::fill(grads.begin(), grads.end(), 0.0f);
    tp.backward(loss);
    bind.accumulate_grads(grads);
    adam_update(store, grads, adam, cfg.adam);
    result.steps_run = s + 1;

    json line{{"step", s}, {"loss", lv}, {"train_acc", train_acc}};
    bool is_eval = ((s + 1) % cfg.eval_every == 0) || (s + 1) == cfg.max_steps;
    if (is_eval) {
      double hacc = eval_pairs_accuracy(hold, hold_pairs, model, store);
      result.best_holdout_acc = std::max(result.best_holdout_acc, hacc);
      line["holdout_acc"] = hacc;
      result.metrics.lines.push_back(line.dump());
      if (cfg.early_stop_acc <= 1.0 && hacc >= cfg.early_stop_acc) break;
    } else {
      result.metrics.lines.push_back(line.dump());
    }
  }
  return result;
}

double ternary_accuracy(const std::vector<LabeledTrajectory>& trajectories,
                        const SequenceModel& model, const ParamStore<float>& store,
                        int pairs_per_traj, std::uint64_t seed) {
  auto usable = segment_usable(trajectories);
  if (usable.empty()) throw StateError("ternary_accuracy: unsegmentable data");
  std::mt19937 rng(static_cast<std::uint32_t>(seed));
  int n = std::max(3, pairs_per_traj - pairs_per_traj % 3);
  std::vector<std::vector<PairSample>> pair_sets;
  for (const auto& it : usable) pair_sets.push_back(relation_balanced_pairs(it.seg, n, rng));
  return eval_pairs_accuracy(usable, pair_sets, model, store);
}

// ---------------------------------------------------------------------------
// Stage 2

Stage2Features stage2_features(const LabeledTrajectory& traj, const ParamStore<float>& encoder_store,
                               const EncoderConfig& cfg) {
  if (static_cast<int>(traj.channels) != cfg.channels)
    throw ShapeError("stage2_features: trajectory channels do not match encoder");
  if (!traj.labeled()) throw StateError("stage2_features: trajectory has no ground-truth labels");
  const std::int64_t T = traj.length();
  const int C = cfg.channels;

  Stage2Features f;
  f.T = T;
  f.d_z = cfg.d_z;
  f.coarse_dim = 2 * C;

  std::vector<float> h = encoder_encode({traj.samples.data(), traj.samples.size()}, T, encoder_store,
                                        cfg, true);
  f.z.resize(static_cast<std::size_t>(T) * cfg.d_z);
  kern::linear_forward(h.data(), encoder_store.span("encoder/zproj/w").data(),
                       static_cast<const float*>(nullptr), f.z.data(), T, cfg.h_dim(), cfg.d_z);

  // Coarse observation stand-in: per-channel mean/max of the last completed
  // one-second window, refreshed at 1 Hz. Deliberately blind to anything
  // faster than that.
  const auto sps = static_cast<std::int64_t>(std::llround(traj.rate_hz));
  f.coarse.assign(static_cast<std::size_t>(T) * f.coarse_dim, 0.0f);
  for (std::int64_t t = 0; t < T; ++t) {
    std::int64_t b = (sps > 0) ? (t / sps) * sps : 0;
    if (b < sps) continue;  // no completed window yet
    for (int c = 0; c < C; ++c) {
      float mean = 0.0f, mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t s = b - sps; s < b; ++s) {
        float v = traj.samples[s * C + c];
        mean += v;
        mx = std::max(mx, v);
      }
      mean /= static_cast<float>(sps);
      f.coarse[t * f.coarse_dim + 2 * c] = mean;
      f.coarse[t * f.coarse_dim + 2 * c + 1] = mx;
    }
  }

  f.phase_label.resize(static_cast<std::size_t>(T));
  f.count_label.resize(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    f.phase_label[static_cast<std::size_t>(t)] = static_cast<int>(traj.phase_kind_at(t));
    f.count_label[static_cast<std::size_t>(t)] = event_count_up_to(traj, t);
  }

  auto params = default_segmentation_params({traj.samples.data(), traj.samples.size()}, T,
                                            static_cast<int>(traj.channels), traj.rate_hz);
  f.seg = segment_phases({traj.samples.data(), traj.samples.size()}, T,
                         static_cast<int>(traj.channels), params);
  return f;
}

std::vector<float> planner_forward(std::span<const float> z, std::span<const float> coarse,
                                   const ParamStore<float>& ps) {
  const auto& wv = ps.view("planner/w");
  const int in = static_cast<int>(wv.shape[1]);
  const int out = static_cast<int>(wv.shape[0]);
  if (static_cast<int>(z.size() + coarse.size()) != in)
    throw ShapeError("planner_forward: feature dim does not match weights");
  std::vector<float> feat(static_cast<std::size_t>(in));
  std::copy(z.begin(), z.end(), feat.begin());
  std::copy(coarse.begin(), coarse.end(), feat.begin() + static_cast<std::ptrdiff_t>(z.size()));
  std::vector<float> logits(static_cast<std::size_t>(out));
  kern::linear_forward(feat.data(), ps.span("planner/w").data(), ps.span("planner/b").data(),
                       logits.data(), 1, in, out);
  return logits;
}

namespace {

struct Stage2Eval {
  double overall = 0.0, critical = 0.0, idle = 0.0, snap = 0.0, count = 0.0;
  bool has_critical = false;
};

Stage2Eval eval_stage2(const std::vector<Stage2Features>& holdout, const ParamStore<float>& store,
                       int count_classes) {
  std::int64_t ok_all = 0, n_all = 0, ok_crit = 0, n_crit = 0, ok_idle = 0, n_idle = 0, ok_snap = 0,
               n_snap = 0, ok_cnt = 0, n_cnt = 0;
  for (const auto& f : holdout) {
    for (std::int64_t t = 0; t < f.T; ++t) {
      auto logits = planner_forward({f.z.data() + t * f.d_z, static_cast<std::size_t>(f.d_z)},
                                    {f.coarse.data() + t * f.coarse_dim,
                                     static_cast<std::size_t>(f.coarse_dim)},
                                    store);
      int pred = argmax3(logits.data(), kPhaseKindCount);
      int truth = f.phase_label[static_cast<std::size_t>(t)];
      auto kind = static_cast<PhaseKind>(truth);
      bool hit = pred == truth;
      ++n_all;
      ok_all += hit;
      if (is_critical_kind(kind)) {
        ++n_crit;
        ok_crit += hit;
      }
      if (kind == PhaseKind::idle) {
        ++n_idle;
        ok_idle += hit;
      }
      if (kind == PhaseKind::snap) {
        ++n_snap;
        ok_snap += hit;
      }
      if (count_classes > 0) {
        int cpred = argmax3(logits.data() + kPhaseKindCount, count_classes);
        int ctruth = std::min(f.count_label[static_cast<std::size_t>(t)], count_classes - 1);
        ++n_cnt;
        ok_cnt += (cpred == ctruth);
      }
    }
  }
  Stage2Eval e;
  e.overall = n_all ? static_cast<double>(ok_all) / static_cast<double>(n_all) : 0.0;
  e.has_critical = n_crit > 0;
  e.critical = n_crit ? static_cast<double>(ok_crit) / static_cast<double>(n_crit) : 0.0;
  e.idle = n_idle ? static_cast<double>(ok_idle) / static_cast<double>(n_idle) : 0.0;
  e.snap = n_snap ? static_cast<double>(ok_snap) / static_cast<double>(n_snap) : 0.0;
  e.count = n_cnt ? static_cast<double>(ok_cnt) / static_cast<double>(n_cnt) : 0.0;
  return e;
}

}  // namespace

Stage2Result finetune_stage2(const std::vector<Stage2Features>& train_set,
                             const std::vector<Stage2Features>& holdout_set,
                             const ParamStore<float>& encoder_store, const EncoderConfig& enc_cfg,
                             const Stage2Config& cfg) {
  if (train_set.empty() || holdout_set.empty())
    throw ShapeError("stage2: need non-empty train and holdout sets");
  const int in_dim = train_set[0].d_z + train_set[0].coarse_dim;
  const int out_dim = kPhaseKindCount + cfg.count_classes;

  Stage2Result result;
  ParamStore<float>& store = result.store;
  add_encoder_params(store, enc_cfg);
  for (const auto& [name, v] : store.views()) {
    auto dst = store.span(name);
    auto src = encoder_store.span(name);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  add_planner_params(store, in_dim, out_dim);
  {
    std::mt19937 prng(static_cast<std::uint32_t>(cfg.seed) ^ 0x51edu);
    init_planner_params(store, prng);
  }
  store.set_trainable("encoder/", false);

  AdamState<float> adam(store.size());
  std::vector<float> grads(store.size(), 0.0f);
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed));

  for (int s = 0; s < cfg.max_steps; ++s) {
    const Stage2Features& f =
        train_set[std::uniform_int_distribution<std::size_t>(0, train_set.size() - 1)(rng)];
    std::vector<std::int64_t> idx = (cfg.sampler == SamplerKind::uniform)
                                        ? uniform_sample(f.T, cfg.batch, rng)
                                        : phase_uniform_sample(f.seg, cfg.batch, rng);

    Tensor<float> feat({static_cast<std::int64_t>(idx.size()), in_dim});
    std::vector<int> phase_labels(idx.size()), count_labels(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::int64_t t = idx[r];
      float* row = feat.data() + static_cast<std::int64_t>(r) * in_dim;
      std::copy(f.z.data() + t * f.d_z, f.z.data() + (t + 1) * f.d_z, row);
      std::copy(f.coarse.data() + t * f.coarse_dim, f.coarse.data() + (t + 1) * f.coarse_dim,
                row + f.d_z);
      phase_labels[r] = f.phase_label[static_cast<std::size_t>(t)];
      count_labels[r] = std::min(f.count_label[static_cast<std::size_t>(t)],
                                 std::max(0, cfg.count_classes - 1));
    }

    Tape<float> tp;
    StoreBinding<float> bind(tp, store);
    int logits = tp.linear(tp.constant(std::move(feat)), bind.node("planner/w"),
                           bind.node("planner/b"));
    int loss = tp.softmax_cross_entropy(tp.slice_cols(logits, 0, kPhaseKindCount), phase_labels);
    if (cfg.count_classes > 0) {
      int lc = tp.slice_cols(logits, kPhaseKindCount, out_dim);
      loss = tp.add(loss, tp.softmax_cross_entropy(lc, count_labels));
    }
    float lv = tp.val(loss).v[0];

    std::fill(grads.begin(), grads.end(), 0.0f);
    tp.backward(loss);
    bind.accumulate_grads(grads);
    adam_update(store, grads, adam, cfg.adam);
    result.steps_run = s + 1;

    bool is_eval = ((s + 1) % cfg.eval_every == 0) || (s + 1) == cfg.max_steps;
    if (is_eval) {
      Stage2Eval e = eval_stage2(holdout_set, store, cfg.count_classes);
      json line{{"step", s + 1},         {"loss", lv},           {"acc_overall", e.overall},
                {"acc_critical", e.critical}, {"acc_idle", e.idle}, {"acc_snap", e.snap},
                {"sampler", to_string(cfg.sampler)}};
      if (cfg.count_classes > 0) line["acc_count"] = e.count;
      result.metrics.lines.push_back(line.dump());
      result.critical_curve.emplace_back(s + 1, e.critical);
      if (cfg.stop_at_critical_acc <= 1.0 && e.critical >= cfg.stop_at_critical_acc) break;
    }
  }
  return result;
}

}  // namespace tacmamba
