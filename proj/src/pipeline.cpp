#include "csvs/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "csvs/error.hpp"
#include "csvs/mlpg.hpp"

namespace csvs {

namespace {

using nlohmann::json;

// Normalized model inputs and targets for one corpus item.
struct PreparedItem {
  Matrix inputs;
  std::vector<double> pitch;
  Matrix targets;  // normalized c (proposed) or normalized o (baseline)
};

struct SegmentRef {
  std::size_t item;
  Segment span;
};

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Matrix clamp_to(const Matrix& m, Range r) {
  Matrix out = m;
  for (double& v : out.values()) v = std::clamp(v, r.lo, r.hi);
  return out;
}

const WindowMatrix& window_for(std::map<std::size_t, WindowMatrix>& cache, std::size_t frames,
                               const WindowSet& windows) {
  auto it = cache.find(frames);
  if (it == cache.end()) it = cache.emplace(frames, WindowMatrix(frames, windows)).first;
  return it->second;
}

void check_finite(double loss, std::size_t epoch, const std::string& where) {
  if (!std::isfinite(loss))
    throw NumericalError(fmt::format("training: non-finite loss {} in epoch {} on {}", loss, epoch, where));
}

std::vector<double> column_variances(std::span<const Matrix> ms, double floor) {
  const std::size_t D = ms.front().cols();
  std::vector<double> sum(D, 0.0), sum_sq(D, 0.0);
  std::size_t n = 0;
  for (const Matrix& m : ms) {
    for (std::size_t t = 0; t < m.rows(); ++t)
      for (std::size_t k = 0; k < D; ++k) sum[k] += m(t, k);
    n += m.rows();
  }
  for (std::size_t k = 0; k < D; ++k) sum[k] /= static_cast<double>(n);
  for (const Matrix& m : ms)
    for (std::size_t t = 0; t < m.rows(); ++t)
      for (std::size_t k = 0; k < D; ++k) sum_sq[k] += (m(t, k) - sum[k]) * (m(t, k) - sum[k]);
  for (std::size_t k = 0; k < D; ++k) sum_sq[k] = std::max(sum_sq[k] / static_cast<double>(n), floor);
  return sum_sq;
}

std::vector<SegmentRef> training_segments(const std::vector<PreparedItem>& items, const ModelConfig& cfg) {
  std::vector<SegmentRef> segs;
  const std::size_t min_frames = cfg.total_stride();
  for (std::size_t i = 0; i < items.size(); ++i)
    for (const Segment& s : plan_training_segments(items[i].inputs.rows(), cfg.segment_frames, min_frames))
      segs.push_back({i, s});
  return segs;
}

std::span<const double> pitch_span(const std::vector<double>& pitch, Segment s) {
  return std::span<const double>(pitch).subspan(s.begin, s.length());
}

}  // namespace

TrainConfig train_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("train config must be a JSON object");
  static const std::set<std::string> known{"epochs", "mode",    "seed",           "learning_rate", "beta1",
                                           "beta2",  "epsilon", "variance_floor", "sigma_warmup_epochs",
                                           "learning_rate_after_warmup", "model", "features"};
  for (const auto& [key, value] : j.items())
    if (!known.contains(key)) throw ConfigError(fmt::format("train config: unknown key \"{}\"", key));
  TrainConfig cfg;
  try {
    cfg.epochs = j.value("epochs", cfg.epochs);
    const std::string mode = j.value("mode", std::string("proposed"));
    if (mode != "proposed" && mode != "baseline")
      throw ConfigError(fmt::format("train config: mode must be proposed or baseline, not \"{}\"", mode));
    cfg.mode = mode == "proposed" ? ModelKind::proposed : ModelKind::baseline;
    cfg.seed = j.value("seed", cfg.seed);
    cfg.adam.learning_rate = j.value("learning_rate", cfg.adam.learning_rate);
    cfg.adam.beta1 = j.value("beta1", cfg.adam.beta1);
    cfg.adam.beta2 = j.value("beta2", cfg.adam.beta2);
    cfg.adam.epsilon = j.value("epsilon", cfg.adam.epsilon);
    cfg.variance_floor = j.value("variance_floor", cfg.variance_floor);
    cfg.sigma_warmup_epochs = j.value("sigma_warmup_epochs", cfg.sigma_warmup_epochs);
    cfg.learning_rate_after_warmup = j.value("learning_rate_after_warmup", cfg.learning_rate_after_warmup);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("train config: {}", e.what()));
  }
  if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  if (j.contains("features")) cfg.features = feature_config_from_json(j.at("features"));
  return cfg;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError(fmt::format("cannot open config {}", path.string()));
  try {
    return train_config_from_json(json::parse(f));
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config {}: {}", path.string(), e.what()));
  }
}

std::vector<Segment> plan_training_segments(std::size_t frames, std::size_t length, std::size_t min_frames) {
  if (length == 0) throw ConfigError("segment length must be positive");
  std::vector<Segment> segs;
  for (std::size_t b = 0; b < frames; b += length) segs.push_back({b, std::min(frames, b + length)});
  if (segs.size() > 1 && segs.back().length() < min_frames) {
    segs[segs.size() - 2].end = frames;
    segs.pop_back();
  }
  return segs;
}

std::vector<Segment> plan_generation_segments(std::size_t frames, std::size_t length, std::size_t overlap,
                                              std::size_t min_frames) {
  if (overlap >= length) throw ConfigError("overlap must be shorter than a segment");
  if (frames == 0) return {};
  if (frames <= length) return {{0, frames}};
  const std::size_t step = length - overlap;
  const std::size_t n = (frames - overlap + step - 1) / step;
  std::vector<Segment> segs;
  for (std::size_t i = 0; i < n; ++i) segs.push_back({i * step, std::min(frames, i * step + length)});
  segs.back().end = frames;
  if (segs.size() > 1 && segs.back().length() < std::max(min_frames, overlap + 1)) {
    segs.pop_back();
    segs.back().end = frames;
  }
  return segs;
}

std::vector<double> crossfade_weights(std::size_t overlap) {
  std::vector<double> w(overlap);
  for (std::size_t k = 0; k < overlap; ++k)
    w[k] = static_cast<double>(overlap - k) / static_cast<double>(overlap + 1);
  return w;
}

Matrix crossfade_stitch(std::span<const Matrix> segments, std::size_t overlap) {
  if (segments.empty()) return {};
  const std::size_t D = segments.front().cols();
  std::size_t total = 0;
  for (const Matrix& s : segments) {
    if (s.cols() != D) throw DataError("crossfade: segments differ in width");
    if (s.rows() < overlap)
      throw DataError(fmt::format("crossfade: overlap {} larger than a {}-frame segment", overlap, s.rows()));
    total += s.rows();
  }
  total -= (segments.size() - 1) * overlap;

  const std::vector<double> w = crossfade_weights(overlap);
  Matrix out(total, D);
  std::size_t cursor = 0;  // rows already final or pending blend
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const Matrix& b = segments[i];
    std::size_t k0 = 0;
    if (i > 0) {
      const std::size_t base = cursor - overlap;
      for (std::size_t k = 0; k < overlap; ++k)
        for (std::size_t d = 0; d < D; ++d) {
          const double a = out(base + k, d), bv = b(k, d);
          out(base + k, d) = bv + w[k] * (a - bv);
        }
      k0 = overlap;
    }
    for (std::size_t k = k0; k < b.rows(); ++k)
      for (std::size_t d = 0; d < D; ++d) out(cursor + k - k0, d) = b(k, d);
    cursor += b.rows() - k0;
  }
  return out;
}

TrainResult train(const Corpus& corpus, TrainConfig cfg, const EpochCallback& on_epoch) {
  corpus.validate();
  if (cfg.features.phone_inventory.empty()) cfg.features.phone_inventory = corpus.phone_inventory;
  const std::size_t D = corpus.layout.dim();
  const WindowSet windows = WindowSet::standard();
  const std::size_t out_dim = cfg.mode == ModelKind::proposed ? D : windows.size() * D;

  if (cfg.model.input_dim == 0) cfg.model.input_dim = cfg.features.input_dim();
  if (cfg.model.output_dim == 0) cfg.model.output_dim = D;
  if (cfg.model.input_dim != cfg.features.input_dim())
    throw ConfigError(fmt::format("model input_dim {} does not match the {} context features",
                                  cfg.model.input_dim, cfg.features.input_dim()));
  if (cfg.model.output_dim != D)
    throw ConfigError(fmt::format("model output_dim {} does not match the {}-dimensional feature layout",
                                  cfg.model.output_dim, D));
  cfg.model.validate();
  if (!(cfg.adam.learning_rate > 0.0 && std::isfinite(cfg.adam.learning_rate)))
    throw ConfigError("learning rate must be positive and finite");
  if (!(cfg.learning_rate_after_warmup >= 0.0 && std::isfinite(cfg.learning_rate_after_warmup)))
    throw ConfigError("learning_rate_after_warmup must be finite and >= 0");
  if (!(cfg.variance_floor > 0.0)) throw ConfigError("variance floor must be positive");

  std::vector<Matrix> contexts, outputs;
  std::vector<std::vector<double>> pitches;
  for (const CorpusItem& item : corpus.items) {
    contexts.push_back(encode_contexts(item.score, cfg.features));
    pitches.push_back(interpolate_note_logf0(item.score));
    outputs.push_back(item.features);
  }

  ModelCheckpoint ckpt;
  ckpt.kind = cfg.mode;
  ckpt.model = cfg.model;
  ckpt.features = cfg.features;
  ckpt.layout = corpus.layout;
  ckpt.frame_shift = corpus.items.front().score.frame_shift_s;
  ckpt.norm = fit_norm_stats(contexts, pitches, outputs);

  std::vector<PreparedItem> items;
  for (std::size_t i = 0; i < corpus.items.size(); ++i) {
    const ScoreFeatureSequence sf = make_score_features(corpus.items[i].score, cfg.features, ckpt.norm);
    items.push_back({sf.frames, sf.note_pitch, normalize(outputs[i], ckpt.norm.output, kOutputRange)});
  }

  if (cfg.mode == ModelKind::baseline) {
    std::vector<Matrix> o_raw;
    for (const Matrix& c : outputs) o_raw.push_back(expand_trajectory(c, WindowMatrix(c.rows(), windows)));
    ckpt.o_stats = fit_dim_stats(o_raw);
    ckpt.sigma = {column_variances(o_raw, cfg.variance_floor), cfg.variance_floor};
    for (std::size_t i = 0; i < items.size(); ++i) items[i].targets = normalize(o_raw[i], ckpt.o_stats, kOutputRange);
  } else {
    ckpt.sigma = TiedCovariance::unit(windows.size() * D, cfg.variance_floor);
  }

  std::vector<SegmentRef> segs = training_segments(items, cfg.model);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(cfg.adam);
  std::map<std::size_t, WindowMatrix> window_cache;
  TrainResult result;

  auto run = [&](auto& model, auto&& segment_loss) {
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(segs.begin(), segs.end(), rng);
      ResidualAccumulator acc(windows.size() * D);
      double total = 0.0;
      for (const SegmentRef& ref : segs) {
        Tape tape;
        Var loss = segment_loss(model, tape, ref, acc);
        const double value = loss.value()[0];
        check_finite(value, epoch, fmt::format("{} [{}, {})", corpus.items[ref.item].name, ref.span.begin,
                                               ref.span.end));
        tape.backward(loss);
        adam.step(model.params());
        model.params().zero_grad();
        total += value;
      }
      if (cfg.mode == ModelKind::proposed && epoch + 1 >= cfg.sigma_warmup_epochs) {
        ckpt.sigma = update_tied_covariance(acc, cfg.variance_floor);
        // Gradient scales jump when Sigma first leaves unit variance.
        if (epoch + 1 == std::max<std::size_t>(cfg.sigma_warmup_epochs, 1)) {
          adam.reset();
          if (cfg.learning_rate_after_warmup > 0.0) adam.set_learning_rate(cfg.learning_rate_after_warmup);
        }
      }
      const double epoch_loss = total / static_cast<double>(segs.size());
      result.epoch_loss.push_back(epoch_loss);
      if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    ckpt.params = model.params();
  };

  if (cfg.mode == ModelKind::proposed) {
    CnnAcousticModel model(cfg.model, cfg.seed);
    run(model, [&](CnnAcousticModel& m, Tape& tape, const SegmentRef& ref, ResidualAccumulator& acc) {
      const PreparedItem& item = items[ref.item];
      const Matrix in = item.inputs.slice_rows(ref.span.begin, ref.span.end);
      Var out = m.forward(tape, in, pitch_span(item.pitch, ref.span), true, rng);
      const Matrix target = item.targets.slice_rows(ref.span.begin, ref.span.end);
      return trajectory_nll(out, target, ckpt.sigma, window_for(window_cache, ref.span.length(), windows), &acc);
    });
  } else {
    FeedForwardModel model(cfg.model, out_dim, cfg.seed);
    run(model, [&](FeedForwardModel& m, Tape& tape, const SegmentRef& ref, ResidualAccumulator&) {
      const PreparedItem& item = items[ref.item];
      Var out = m.forward(tape, item.inputs.slice_rows(ref.span.begin, ref.span.end), true, rng);
      return squared_error(out, to_channels(item.targets.slice_rows(ref.span.begin, ref.span.end)));
    });
  }
  ckpt.rng_state = rng_state(rng);
  result.checkpoint = std::move(ckpt);
  return result;
}

FeaturePrediction predict_features(const ModelCheckpoint& ckpt, const Score& score, const GenerationOptions& opts) {
  validate_score(score);
  FeaturePrediction pred;
  pred.input = make_score_features(score, ckpt.features, ckpt.norm);
  const std::size_t T = pred.input.length();

  if (ckpt.kind == ModelKind::proposed) {
    const CnnAcousticModel model(ckpt.model, ckpt.params);
    const std::size_t length = opts.segment_frames.value_or(ckpt.model.segment_frames);
    const std::size_t overlap = opts.overlap_frames.value_or(ckpt.model.overlap_frames);
    if (length < model.min_frames())
      throw ConfigError(fmt::format("segment of {} frames is below the back-end minimum {}", length,
                                    model.min_frames()));
    std::vector<Matrix> outs;
    for (const Segment& s : plan_generation_segments(T, length, overlap, model.min_frames()))
      outs.push_back(model.infer(pred.input.frames.slice_rows(s.begin, s.end), pitch_span(pred.input.note_pitch, s)));
    pred.normalized = crossfade_stitch(outs, overlap);
    pred.features = denormalize(clamp_to(pred.normalized, kOutputRange), ckpt.norm.output, kOutputRange);
    return pred;
  }

  const FeedForwardModel model(ckpt.model, ckpt.o_stats.dim(), ckpt.params);
  pred.normalized = model.infer(pred.input.frames);
  const Matrix o = denormalize(clamp_to(pred.normalized, kOutputRange), ckpt.o_stats, kOutputRange);
  const std::size_t D = ckpt.layout.dim();
  pred.raw_static = o.slice_cols(0, D);
  GenerationProblem problem{o, Matrix(T, o.cols()), WindowSet::standard()};
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t k = 0; k < o.cols(); ++k) problem.variances(t, k) = ckpt.sigma.variances[k];
  pred.features = mlpg_generate(problem);
  return pred;
}

SynthesisResult render_features(const Matrix& features, std::span<const double> note_logf0,
                                const AcousticLayout& layout, double frame_shift, const SynthesisOptions& opts) {
  if (features.cols() != layout.dim())
    throw DataError(fmt::format("synthesis: {} feature columns, layout needs {}", features.cols(), layout.dim()));
  const std::size_t T = features.rows();
  auto column = [&features, T](std::size_t c) {
    std::vector<double> v(T);
    for (std::size_t t = 0; t < T; ++t) v[t] = features(t, c);
    return v;
  };
  SynthesisResult r;
  const F0Track base =
      reconstruct_logf0(column(layout.lf0()), note_logf0, column(layout.f0_flag()), frame_shift);
  r.f0 = apply_vibrato(base, find_vibrato_sections(column(layout.vib_amp()), column(layout.vib_freq()),
                                                   column(layout.vib_flag())));
  const std::vector<double> excitation = generate_excitation(r.f0, opts.sample_rate, opts.noise_seed);
  r.waveform = mlsa_filter(excitation, features.slice_cols(0, layout.mgc), opts.alpha, opts.sample_rate,
                           frame_shift);
  finalize_waveform(r.waveform);
  return r;
}

SynthesisResult synthesize(const ModelCheckpoint& ckpt, const Score& score, const SynthesisOptions& opts) {
  FeaturePrediction pred = predict_features(ckpt, score, opts.generation);
  SynthesisResult r = render_features(pred.features, pred.input.note_logf0, ckpt.layout, score.frame_shift_s, opts);
  r.prediction = std::move(pred);
  return r;
}

EvalReport evaluate(const ModelCheckpoint& ckpt, const Corpus& corpus, const GenerationOptions& opts) {
  corpus.validate();
  if (corpus.layout != ckpt.layout) throw DataError("evaluate: corpus layout differs from the checkpoint");
  const std::size_t D = ckpt.layout.dim();
  EvalReport report;
  report.rms.assign(D, 0.0);
  double nll = 0.0;
  const WindowSet windows = WindowSet::standard();
  for (const CorpusItem& item : corpus.items) {
    const FeaturePrediction pred = predict_features(ckpt, item.score, opts);
    const std::size_t T = item.features.rows();
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        const double e = pred.features(t, d) - item.features(t, d);
        report.rms[d] += e * e;
      }
    const WindowMatrix W(T, windows);
    if (ckpt.kind == ModelKind::proposed) {
      nll += trajectory_nll_value(pred.normalized, normalize(item.features, ckpt.norm.output, kOutputRange),
                                  ckpt.sigma, W);
    } else {
      const Matrix o_ref = expand_trajectory(item.features, W);
      const Matrix mu = denormalize(clamp_to(pred.normalized, kOutputRange), ckpt.o_stats, kOutputRange);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t k = 0; k < o_ref.cols(); ++k) {
          const double v = ckpt.sigma.variances[k], e = o_ref(t, k) - mu(t, k);
          nll += 0.5 * (e * e / v + std::log(2.0 * std::numbers::pi * v));
        }
    }
    report.frames += T;
  }
  for (double& r : report.rms) r = std::sqrt(r / static_cast<double>(report.frames));
  report.nll = nll / static_cast<double>(report.frames);
  return report;
}

double mean_abs_delta(const Matrix& m, std::size_t col_begin, std::size_t col_count) {
  if (m.rows() < 2 || col_count == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t t = 1; t < m.rows(); ++t)
    for (std::size_t c = col_begin; c < col_begin + col_count; ++c) acc += std::abs(m(t, c) - m(t - 1, c));
  return acc / static_cast<double>((m.rows() - 1) * col_count);
}

}  // namespace csvs
