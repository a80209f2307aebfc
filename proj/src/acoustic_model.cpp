#include "csvs/acoustic_model.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "csvs/error.hpp"

namespace csvs {

namespace {

// Trainable binding records the parameter for backward(); otherwise the value
// is copied in as a constant.
Var bind_param(Tape& tape, const ParamStore& params, ParamStore* trainable, const std::string& name) {
  if (trainable != nullptr) return tape.param(trainable->get(name));
  return tape.constant(params.get(name).value);
}

void add_frontend_params(ParamStore& params, const ModelConfig& cfg, std::mt19937_64& rng) {
  std::size_t in = cfg.input_dim;
  for (std::size_t i = 0; i < cfg.frontend_widths.size(); ++i) {
    const std::size_t out = cfg.frontend_widths[i];
    params.add(fmt::format("frontend.{}.weight", i), glorot_uniform({out, in, 1}, in, out, rng));
    params.add(fmt::format("frontend.{}.bias", i), Tensor({out}));
    in = out;
  }
}

Var frontend_stack(Tape& tape, const ParamStore& params, ParamStore* trainable, const ModelConfig& cfg, Var x,
                   bool training, std::mt19937_64* rng) {
  for (std::size_t i = 0; i < cfg.frontend_widths.size(); ++i) {
    Var w = bind_param(tape, params, trainable, fmt::format("frontend.{}.weight", i));
    Var b = bind_param(tape, params, trainable, fmt::format("frontend.{}.bias", i));
    x = relu(conv1d(x, w, b, 1, Padding::same));
    if (training && cfg.dropout > 0.0) x = dropout(x, cfg.dropout, true, *rng);
  }
  return x;
}

long floor_div(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

struct Interval {
  long lo;
  long hi;
};

// Outputs of a same-padded conv touched by inputs in [iv.lo, iv.hi].
Interval through_conv(Interval iv, long K, long stride, long out_len) {
  const long pad = (K - 1) / 2;
  const long lo = -floor_div(-(iv.lo + pad - K + 1), stride);
  const long hi = floor_div(iv.hi + pad, stride);
  return {std::max(lo, 0L), std::min(hi, out_len - 1)};
}

Interval through_transpose(Interval iv, long K, long stride, long out_len) {
  const long pad = (K - 1) / 2;
  return {std::max(iv.lo * stride - pad, 0L), std::min(iv.hi * stride + K - 1 - pad, out_len - 1)};
}

}  // namespace

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model: input_dim must be positive");
  if (output_dim == 0) throw ConfigError("model: output_dim must be positive");
  for (std::size_t w : frontend_widths)
    if (w == 0) throw ConfigError("model: front-end widths must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must be in [0, 1)");
  if (downsample_layers != upsample_layers)
    throw ConfigError("model: up-sampling must undo down-sampling (equal layer counts)");
  if (upsample_layers == 0) throw ConfigError("model: need at least one up-sampling layer");
  if (kernel_width == 0 || upsample_kernel_width == 0) throw ConfigError("model: kernel widths must be positive");
  if (channels == 0) throw ConfigError("model: channel width must be positive");
  if (segment_frames < total_stride()) throw ConfigError("model: segment shorter than the back-end stride");
  if (overlap_frames >= segment_frames) throw ConfigError("model: overlap must be shorter than a segment");
}

CnnAcousticModel::CnnAcousticModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  init(seed);
}

CnnAcousticModel::CnnAcousticModel(ModelConfig cfg, ParamStore params)
    : cfg_(std::move(cfg)), params_(std::move(params)) {
  cfg_.validate();
  CnnAcousticModel reference(cfg_, 0);
  for (const auto& [name, p] : reference.params_) {
    if (!params_.contains(name)) throw DataError(fmt::format("model: missing parameter \"{}\"", name));
    if (params_.get(name).value.shape() != p.value.shape())
      throw DataError(fmt::format("model: parameter \"{}\" has the wrong shape", name));
  }
  if (params_.size() != reference.params_.size()) throw DataError("model: unexpected extra parameters");
}

void CnnAcousticModel::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  add_frontend_params(params_, cfg_, rng);

  const std::size_t C = cfg_.channels, K = cfg_.kernel_width, UK = cfg_.upsample_kernel_width;
  std::size_t in = cfg_.frontend_out() + 1;
  for (std::size_t i = 0; i < cfg_.downsample_layers; ++i) {
    params_.add(fmt::format("backend.down.{}.weight", i), glorot_uniform({C, in, K}, in * K, C * K, rng));
    params_.add(fmt::format("backend.down.{}.bias", i), Tensor({C}));
    in = C;
  }
  for (std::size_t i = 0; i < cfg_.residual_blocks; ++i) {
    for (int j = 1; j <= 2; ++j) {
      params_.add(fmt::format("backend.res.{}.conv{}.weight", i, j), glorot_uniform({C, C, K}, C * K, C * K, rng));
      params_.add(fmt::format("backend.res.{}.conv{}.bias", i, j), Tensor({C}));
    }
  }
  for (std::size_t i = 0; i < cfg_.upsample_layers; ++i) {
    const bool last = i + 1 == cfg_.upsample_layers;
    const std::size_t out = last ? cfg_.output_dim : C;
    params_.add(fmt::format("backend.up.{}.weight", i), glorot_uniform({in, out, UK}, in * UK, out * UK, rng));
    params_.add(fmt::format("backend.up.{}.bias", i), Tensor({out}));
    in = out;
  }
}

Var CnnAcousticModel::bind(Tape& tape, const std::string& name, ParamStore* trainable) const {
  return bind_param(tape, params_, trainable, name);
}

Var CnnAcousticModel::frontend_impl(Tape& tape, Var s, bool training, std::mt19937_64* rng,
                                    ParamStore* trainable) const {
  if (s.value().rank() != 2 || s.value().dim(0) != cfg_.input_dim)
    throw DataError(fmt::format("front-end: expected {} input channels", cfg_.input_dim));
  return frontend_stack(tape, params_, trainable, cfg_, s, training, rng);
}

Var CnnAcousticModel::frontend_forward(Tape& tape, Var s, bool training, std::mt19937_64& rng) {
  return frontend_impl(tape, s, training, &rng, &params_);
}

Var CnnAcousticModel::concat_note_pitch(Var h, Var pitch) {
  if (pitch.value().rank() != 2 || pitch.value().dim(0) != 1)
    throw DataError("concat_note_pitch: pitch track must be 1 x T");
  if (pitch.value().dim(1) != h.value().dim(1)) throw DataError("concat_note_pitch: length mismatch");
  return concat_channels(h, pitch);
}

Var CnnAcousticModel::backend_impl(Tape& tape, Var x, ParamStore* trainable) const {
  const Tensor& X = x.value();
  if (X.rank() != 2 || X.dim(0) != cfg_.frontend_out() + 1)
    throw DataError(fmt::format("back-end: expected {} input channels", cfg_.frontend_out() + 1));
  const std::size_t T = X.dim(1);
  if (T < min_frames())
    throw DataError(fmt::format("back-end: segment of {} frames is shorter than the minimum {}", T, min_frames()));

  const std::size_t stride = cfg_.total_stride();
  const std::size_t padded = (T + stride - 1) / stride * stride;
  Var h = resize_frames(x, padded);

  for (std::size_t i = 0; i < cfg_.downsample_layers; ++i) {
    Var w = bind(tape, fmt::format("backend.down.{}.weight", i), trainable);
    Var b = bind(tape, fmt::format("backend.down.{}.bias", i), trainable);
    h = relu(conv1d(h, w, b, 2, Padding::same));
  }
  for (std::size_t i = 0; i < cfg_.residual_blocks; ++i) {
    Var w1 = bind(tape, fmt::format("backend.res.{}.conv1.weight", i), trainable);
    Var b1 = bind(tape, fmt::format("backend.res.{}.conv1.bias", i), trainable);
    Var w2 = bind(tape, fmt::format("backend.res.{}.conv2.weight", i), trainable);
    Var b2 = bind(tape, fmt::format("backend.res.{}.conv2.bias", i), trainable);
    Var inner = relu(conv1d(h, w1, b1, 1, Padding::same));
    h = add(h, conv1d(inner, w2, b2, 1, Padding::same));
  }
  for (std::size_t i = 0; i < cfg_.upsample_layers; ++i) {
    Var w = bind(tape, fmt::format("backend.up.{}.weight", i), trainable);
    Var b = bind(tape, fmt::format("backend.up.{}.bias", i), trainable);
    h = conv1d_transpose(h, w, b, 2);
    h = i + 1 == cfg_.upsample_layers ? sigmoid(h) : relu(h);
  }
  return resize_frames(h, T);
}

Var CnnAcousticModel::backend_forward(Tape& tape, Var x) { return backend_impl(tape, x, &params_); }

Var CnnAcousticModel::forward(Tape& tape, const Matrix& frames, std::span<const double> note_pitch,
                              bool training, std::mt19937_64& rng) {
  if (note_pitch.size() != frames.rows()) throw DataError("model: note pitch length differs from frame count");
  Var s = tape.constant(to_channels(frames));
  Var p = tape.constant(Tensor({1, note_pitch.size()}, {note_pitch.begin(), note_pitch.end()}));
  Var h = frontend_impl(tape, s, training, &rng, &params_);
  return backend_impl(tape, concat_note_pitch(h, p), &params_);
}

Matrix CnnAcousticModel::infer(const Matrix& frames, std::span<const double> note_pitch) const {
  if (note_pitch.size() != frames.rows()) throw DataError("model: note pitch length differs from frame count");
  Tape tape;
  Var s = tape.constant(to_channels(frames));
  Var p = tape.constant(Tensor({1, note_pitch.size()}, {note_pitch.begin(), note_pitch.end()}));
  Var h = frontend_impl(tape, s, false, nullptr, nullptr);
  return to_frames(backend_impl(tape, concat_note_pitch(h, p), nullptr).value());
}

std::pair<std::size_t, std::size_t> CnnAcousticModel::affected_output_range(std::size_t frame,
                                                                            std::size_t T) const {
  const long stride = static_cast<long>(cfg_.total_stride());
  long len = (static_cast<long>(T) + stride - 1) / stride * stride;
  const long K = static_cast<long>(cfg_.kernel_width);
  const long UK = static_cast<long>(cfg_.upsample_kernel_width);

  Interval iv{static_cast<long>(frame), static_cast<long>(frame)};
  for (std::size_t i = 0; i < cfg_.downsample_layers; ++i) {
    len /= 2;
    iv = through_conv(iv, K, 2, len);
  }
  for (std::size_t i = 0; i < cfg_.residual_blocks; ++i) {
    const Interval inner = through_conv(through_conv(iv, K, 1, len), K, 1, len);
    iv = {std::min(iv.lo, inner.lo), std::max(iv.hi, inner.hi)};
  }
  for (std::size_t i = 0; i < cfg_.upsample_layers; ++i) {
    len *= 2;
    iv = through_transpose(iv, UK, 2, len);
  }
  const long last = static_cast<long>(T) - 1;
  return {static_cast<std::size_t>(std::clamp(iv.lo, 0L, last)), static_cast<std::size_t>(std::clamp(iv.hi, 0L, last))};
}

FeedForwardModel::FeedForwardModel(ModelConfig cfg, std::size_t out_dim, std::uint64_t seed)
    : cfg_(std::move(cfg)), out_dim_(out_dim) {
  if (cfg_.input_dim == 0 || out_dim_ == 0) throw ConfigError("baseline: dimensions must be positive");
  std::mt19937_64 rng(seed);
  add_frontend_params(params_, cfg_, rng);
  const std::size_t in = cfg_.frontend_out();
  params_.add("output.weight", glorot_uniform({out_dim_, in, 1}, in, out_dim_, rng));
  params_.add("output.bias", Tensor({out_dim_}));
}

FeedForwardModel::FeedForwardModel(ModelConfig cfg, std::size_t out_dim, ParamStore params)
    : cfg_(std::move(cfg)), out_dim_(out_dim), params_(std::move(params)) {
  FeedForwardModel reference(cfg_, out_dim_, 0);
  for (const auto& [name, p] : reference.params_) {
    if (!params_.contains(name)) throw DataError(fmt::format("baseline: missing parameter \"{}\"", name));
    if (params_.get(name).value.shape() != p.value.shape())
      throw DataError(fmt::format("baseline: parameter \"{}\" has the wrong shape", name));
  }
  if (params_.size() != reference.params_.size()) throw DataError("baseline: unexpected extra parameters");
}

Var FeedForwardModel::forward_impl(Tape& tape, const Matrix& frames, bool training, std::mt19937_64* rng,
                                   ParamStore* trainable) const {
  if (frames.cols() != cfg_.input_dim)
    throw DataError(fmt::format("baseline: expected {} input dimensions", cfg_.input_dim));
  Var x = frontend_stack(tape, params_, trainable, cfg_, tape.constant(to_channels(frames)), training, rng);
  Var w = bind_param(tape, params_, trainable, "output.weight");
  Var b = bind_param(tape, params_, trainable, "output.bias");
  return sigmoid(conv1d(x, w, b, 1, Padding::same));
}

Var FeedForwardModel::forward(Tape& tape, const Matrix& frames, bool training, std::mt19937_64& rng) {
  return forward_impl(tape, frames, training, &rng, &params_);
}

Matrix FeedForwardModel::infer(const Matrix& frames) const {
  Tape tape;
  return to_frames(forward_impl(tape, frames, false, nullptr, nullptr).value());
}

}  // namespace csvs
