#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tacmamba/params.hpp"
#include "tacmamba/train.hpp"

// Reference encoders for the architecture comparison: a local 1D-CNN and a
// single-direction LSTM that stream in constant time per step, plus a
// bidirectional LSTM and a causal self-attention stack that re-read the whole
// history on every query. Sizes are picked so each lands within +-25% of the
// default tactile encoder's trainable parameter count.

namespace tacmamba {

enum class BaselineKind { cnn1d, lstm_single, lstm_bi_full, attn_full };

const char* to_string(BaselineKind k);
BaselineKind baseline_kind_from_string(const std::string& s);
inline bool baseline_is_streaming(BaselineKind k) {
  return k == BaselineKind::cnn1d || k == BaselineKind::lstm_single;
}

// cnn1d: three depth-increasing valid convolutions evaluated at the newest
// position only; receptive field = 1 + 3*(k-1).
inline constexpr int kCnnKernel = 9;
inline constexpr int kCnnC1 = 48, kCnnC2 = 96, kCnnC3 = 128, kCnnOut = 64;
inline constexpr int kCnnReceptiveField = 1 + 3 * (kCnnKernel - 1);

inline constexpr int kLstmHidden = 216;     // lstm_single
inline constexpr int kBiLstmHidden = 156;   // each direction of lstm_bi_full
inline constexpr int kAttnDim = 88;
inline constexpr int kAttnHeads = 4;
inline constexpr int kAttnLayers = 2;
inline constexpr int kAttnFfn = 4 * kAttnDim;

struct BaselineWeights {
  BaselineKind kind = BaselineKind::lstm_single;
  ParamStore<float> store;
};

BaselineWeights baseline_init(BaselineKind kind, std::uint64_t seed);
int baseline_feature_dim(BaselineKind kind);
std::size_t baseline_param_count(const BaselineWeights& w);

// Streaming state for cnn1d / lstm_single. Fixed size; one step costs the
// same no matter how long the stream has run.
class BaselineStreamState {
 public:
  BaselineStreamState(BaselineKind kind);
  BaselineKind kind() const { return kind_; }
  std::int64_t timestep() const { return t_; }
  std::size_t allocated_bytes() const;
  void reset();

  friend std::span<const float> baseline_step(BaselineStreamState&, float, const BaselineWeights&);

 private:
  BaselineKind kind_;
  std::int64_t t_ = 0;
  // cnn1d: ring of the last receptive-field raw samples
  std::vector<float> ring_;
  int ring_pos_ = 0;
  // lstm_single: hidden and cell state
  std::vector<float> h_, c_;
  // scratch
  std::vector<float> ws_a_, ws_b_, ws_c_, out_;
};

// One constant-time step; only valid for streaming kinds.
std::span<const float> baseline_step(BaselineStreamState& state, float x_t,
                                     const BaselineWeights& w);

// Whole-history query; only valid for full-history kinds. Re-reads all of
// x_history, so latency grows with its length by construction.
std::vector<float> baseline_query_full(const BaselineWeights& w, std::span<const float> x_history);

// Plain full-sequence forward of a single-direction LSTM over raw samples;
// the oracle for step/sequence agreement and the bidirectional building
// block. Returns (T x H).
std::vector<float> lstm_forward_seq(std::span<const float> x, std::int64_t T,
                                    std::span<const float> w_ih, std::span<const float> w_hh,
                                    std::span<const float> b, int hidden);

// The recurrent baseline as a trainable SequenceModel (shares the ternary
// pretraining loop with the tactile encoder). Inputs are normalized with
// fixed running statistics before entering the LSTM.
class LstmSingleModel : public SequenceModel {
 public:
  explicit LstmSingleModel(std::uint64_t seed = 0, int hidden = kLstmHidden)
      : seed_(seed), hidden_(hidden) {}
  int feature_dim() const override { return hidden_; }
  int channels() const override { return 1; }
  void add_params(ParamStore<float>& ps) const override;
  void init_params(ParamStore<float>& ps) const override;
  int build_h_seq(Tape<float>& tp, StoreBinding<float>& bind, std::span<const float> x_seq,
                  std::int64_t T) const override;
  std::vector<float> encode_plain(std::span<const float> x_seq, std::int64_t T,
                                  const ParamStore<float>& ps) const override;

 private:
  std::vector<float> normalized(std::span<const float> x_seq, std::int64_t T) const;
  std::uint64_t seed_;
  int hidden_;
};

}  // namespace tacmamba
