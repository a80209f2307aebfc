#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csvs/matrix.hpp"
#include "csvs/tensor.hpp"

namespace csvs {

// Column layout of one acoustic frame:
//   [mel-cepstra | log-F0 difference | aperiodicity | vibrato amplitude (cents),
//    vibrato frequency (Hz) | F0 value flag | vibrato value flag]
struct AcousticLayout {
  std::size_t mgc = 50;
  std::size_t ap = 22;

  std::size_t dim() const { return mgc + ap + 5; }
  std::size_t lf0() const { return mgc; }
  std::size_t ap_begin() const { return mgc + 1; }
  std::size_t vib_amp() const { return mgc + 1 + ap; }
  std::size_t vib_freq() const { return vib_amp() + 1; }
  std::size_t f0_flag() const { return vib_amp() + 2; }
  std::size_t vib_flag() const { return vib_amp() + 3; }

  bool operator==(const AcousticLayout&) const = default;
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> frontend_widths{256, 256, 256};
  double dropout = 0.2;
  std::size_t downsample_layers = 2;
  std::size_t residual_blocks = 9;
  std::size_t upsample_layers = 2;
  std::size_t kernel_width = 3;
  // Transposed convolutions use an even width so every output phase sees the
  // same number of taps.
  std::size_t upsample_kernel_width = 4;
  std::size_t channels = 256;
  std::size_t output_dim = 0;
  std::size_t segment_frames = 2000;
  std::size_t overlap_frames = 100;

  // Throws ConfigError.
  void validate() const;
  std::size_t total_stride() const { return std::size_t{1} << downsample_layers; }
  std::size_t frontend_out() const { return frontend_widths.empty() ? input_dim : frontend_widths.back(); }

  bool operator==(const ModelConfig&) const = default;
};

// Two-part convolutional acoustic model: a frame-wise front-end F built from
// 1x1 convolutions, concatenation of the normalized note pitch, and a fully
// convolutional back-end G (strided down-sampling, residual blocks,
// transposed up-sampling, sigmoid output).
class CnnAcousticModel {
 public:
  CnnAcousticModel(ModelConfig cfg, std::uint64_t seed);
  CnnAcousticModel(ModelConfig cfg, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // s: D_in x T. Dropout is active only when training.
  Var frontend_forward(Tape& tape, Var s, bool training, std::mt19937_64& rng);
  // h: H x T, pitch: 1 x T -> (H+1) x T.
  static Var concat_note_pitch(Var h, Var pitch);
  // x: (H+1) x T -> D x T in (0, 1).
  Var backend_forward(Tape& tape, Var x);

  // Full composition on one segment; returns D x T.
  Var forward(Tape& tape, const Matrix& frames, std::span<const double> note_pitch, bool training,
              std::mt19937_64& rng);

  // Eval-mode forward; returns T x D normalized features.
  Matrix infer(const Matrix& frames, std::span<const double> note_pitch) const;

  // Smallest segment the back-end accepts.
  std::size_t min_frames() const { return cfg_.total_stride(); }

  // Inclusive range of output frames that can change when input frame `frame`
  // of a T-frame segment changes.
  std::pair<std::size_t, std::size_t> affected_output_range(std::size_t frame, std::size_t T) const;

 private:
  // `trainable` is &params_ when gradients are wanted, nullptr for eval.
  Var frontend_impl(Tape& tape, Var s, bool training, std::mt19937_64* rng, ParamStore* trainable) const;
  Var backend_impl(Tape& tape, Var x, ParamStore* trainable) const;
  Var bind(Tape& tape, const std::string& name, ParamStore* trainable) const;
  void init(std::uint64_t seed);

  ModelConfig cfg_;
  ParamStore params_;
};

// Frame-wise feed-forward baseline: the front-end stack followed by a 1x1
// sigmoid output layer predicting static and dynamic feature means.
class FeedForwardModel {
 public:
  FeedForwardModel(ModelConfig cfg, std::size_t out_dim, std::uint64_t seed);
  FeedForwardModel(ModelConfig cfg, std::size_t out_dim, ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  std::size_t out_dim() const { return out_dim_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // frames: T x D_in -> out_dim x T.
  Var forward(Tape& tape, const Matrix& frames, bool training, std::mt19937_64& rng);
  Matrix infer(const Matrix& frames) const;

 private:
  Var forward_impl(Tape& tape, const Matrix& frames, bool training, std::mt19937_64* rng,
                   ParamStore* trainable) const;

  ModelConfig cfg_;
  std::size_t out_dim_;
  ParamStore params_;
};

}  // namespace csvs
