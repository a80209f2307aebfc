#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "csvs/checkpoint.hpp"
#include "csvs/corpus.hpp"
#include "csvs/synthesis.hpp"

namespace csvs {

struct TrainConfig {
  std::size_t epochs = 200;
  ModelKind mode = ModelKind::proposed;
  std::uint64_t seed = 1;
  AdamConfig adam;
  double variance_floor = 1e-6;
  // Epochs trained under the initial unit covariance before the per-epoch
  // update starts. Adam moments are reset at the first update.
  std::size_t sigma_warmup_epochs = 0;
  // Learning rate once Sigma updates begin; 0 keeps adam.learning_rate.
  double learning_rate_after_warmup = 0.0;
  // input_dim and output_dim of 0 are filled in from the data.
  ModelConfig model;
  // An empty phone inventory takes the corpus inventory.
  FeatureConfig features;
};

// {"epochs", "mode", "seed", "learning_rate", "beta1", "beta2", "epsilon",
//  "variance_floor", "sigma_warmup_epochs", "learning_rate_after_warmup",
//  "model": {...}, "features": {...}}
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

struct TrainResult {
  ModelCheckpoint checkpoint;
  // Mean segment loss for each epoch: trajectory NLL (proposed) or squared
  // error over normalized static and delta targets (baseline).
  std::vector<double> epoch_loss;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Throws ConfigError, DataError, or NumericalError on a non-finite loss.
TrainResult train(const Corpus& corpus, TrainConfig cfg, const EpochCallback& on_epoch = {});

struct Segment {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
  bool operator==(const Segment&) const = default;
};

// Back-to-back segments of `length` frames; a tail shorter than `min_frames`
// joins the previous segment.
std::vector<Segment> plan_training_segments(std::size_t frames, std::size_t length, std::size_t min_frames);

// Segment i starts at i * (length - overlap); the last one ends at `frames`.
// A last segment shorter than `min_frames` is merged into its predecessor.
std::vector<Segment> plan_generation_segments(std::size_t frames, std::size_t length, std::size_t overlap,
                                              std::size_t min_frames);

// Weight of the earlier segment on overlap frame k: (overlap - k) / (overlap + 1).
// The later segment gets (k + 1) / (overlap + 1).
std::vector<double> crossfade_weights(std::size_t overlap);

// Consecutive segments share `overlap` frames. Overlap frames are
// b + w (a - b) with a the earlier segment and w its weight, which reproduces
// equal content exactly.
Matrix crossfade_stitch(std::span<const Matrix> segments, std::size_t overlap);

struct GenerationOptions {
  std::optional<std::size_t> segment_frames;
  std::optional<std::size_t> overlap_frames;
};

struct FeaturePrediction {
  ScoreFeatureSequence input;
  // Proposed: stitched network output. Baseline: network output in o-space.
  Matrix normalized;
  // Denormalized static features used for synthesis (after parameter
  // generation for the baseline).
  Matrix features;
  // Baseline only: denormalized static part of the network output.
  Matrix raw_static;
};

FeaturePrediction predict_features(const ModelCheckpoint& ckpt, const Score& score,
                                   const GenerationOptions& opts = {});

struct SynthesisOptions {
  double sample_rate = 48000.0;
  double alpha = 0.55;
  std::uint64_t noise_seed = 1;
  GenerationOptions generation;
};

struct SynthesisResult {
  FeaturePrediction prediction;
  F0Track f0;
  WaveformBuffer waveform;
};

// Features -> F0 with vibrato -> excitation -> MLSA -> peak-limited waveform.
SynthesisResult render_features(const Matrix& features, std::span<const double> note_logf0,
                                const AcousticLayout& layout, double frame_shift, const SynthesisOptions& opts);

SynthesisResult synthesize(const ModelCheckpoint& ckpt, const Score& score, const SynthesisOptions& opts = {});

struct EvalReport {
  std::vector<double> rms;  // per feature dimension, denormalized
  double nll = 0.0;         // per frame
  std::size_t frames = 0;
};

// Proposed: trajectory NLL of the stitched output in normalized space under
// the stored covariance. Baseline: Gaussian NLL of the reference o-sequence
// under the predicted means and stored variances.
EvalReport evaluate(const ModelCheckpoint& ckpt, const Corpus& corpus, const GenerationOptions& opts = {});

// Mean absolute first difference over frames and the given columns.
double mean_abs_delta(const Matrix& m, std::size_t col_begin, std::size_t col_count);

}  // namespace csvs
