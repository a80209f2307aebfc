// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "csvs/acoustic_model.hpp"
#include "csvs/mlpg.hpp"
#include "csvs/pipeline.hpp"
#include "csvs/synthesis.hpp"
#include "csvs/trajectory.hpp"
#include "dense_mlpg.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace csvs;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-5;
constexpr double kGradStep = 1e-5;
constexpr double kGradFloor = 1e-6;
constexpr double kGradSeconds = 60.0;
constexpr double kMlpgTol = 1e-8;
constexpr double kMlpgSeconds = 10.0;
constexpr double kSigmaNllTol = 1e-6;
constexpr double kOverfitNllDrop = 0.5;
constexpr double kOverfitRmsFraction = 0.05;
constexpr double kOverfitSeconds = 15.0 * 60.0;
constexpr double kVibratoCentsTol = 1.0;
constexpr double kVibratoHzTol = 0.1;
constexpr double kImpulseEnergy = 0.999;
constexpr double kMulawTol = 1.0 / 255.0;
constexpr double kSmoothnessFactor = 2.0;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto t0 = Clock::now();
  ModelConfig cfg;
  cfg.input_dim = 12;
  cfg.frontend_widths = {16, 16};
  cfg.dropout = 0.2;
  cfg.downsample_layers = 1;
  cfg.residual_blocks = 2;
  cfg.upsample_layers = 1;
  cfg.channels = 16;
  cfg.output_dim = 8;
  cfg.segment_frames = 16;
  cfg.overlap_frames = 0;
  CnnAcousticModel model(cfg, 11);

  const std::size_t T = 16, D = 8;
  std::mt19937_64 rng(12);
  const Matrix frames = testing::random_matrix(T, 12, rng, 0.0, 1.0);
  const std::vector<double> pitch = testing::random_vector(T, rng, 0.0, 1.0);
  const Matrix ref = testing::random_matrix(T, D, rng, 0.05, 0.95);
  TiedCovariance cov;
  cov.variances = testing::random_vector(3 * D, rng, 0.02, 0.2);
  const WindowMatrix W = build_window_matrix(T, WindowSet::standard());

  model.params().zero_grad();
  {
    Tape tape;
    std::mt19937_64 drop(0);
    Var out = model.forward(tape, frames, pitch, false, drop);
    tape.backward(trajectory_nll(out, ref, cov, W));
  }
  const WindowSet ws = WindowSet::standard();
  const auto loss = [&] { return oracle::trajectory_nll(model.infer(frames, pitch), ref, cov.variances, ws); };

  double worst = 0.0;
  std::string worst_at;
  std::size_t checked = 0;
  for (auto& [name, p] : model.params()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + kGradStep;
      const long double up = loss();
      p.value[i] = keep - kGradStep;
      const long double down = loss();
      p.value[i] = keep;
      const double numeric = static_cast<double>((up - down) / (2.0L * kGradStep));
      const double analytic = p.grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kGradFloor});
      if (rel > worst) worst = rel, worst_at = fmt::format("{}[{}]", name, i);
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && secs < kGradSeconds,
          fmt::format("{} parameters, max rel err {:.3e} at {}, {:.1f} s", checked, worst, worst_at, secs)};
}

// ---------------------------------------------------------------------------

Outcome mlpg_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> frames(1, 50), dims(1, 4);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t T = frames(rng), D = dims(rng);
    GenerationProblem p{testing::random_matrix(T, 3 * D, rng, -2.0, 2.0),
                        testing::random_matrix(T, 3 * D, rng, 0.01, 4.0), WindowSet::standard()};
    const Matrix banded = mlpg_generate(p), dense = oracle::dense_mlpg(p);
    for (std::size_t i = 0; i < banded.values().size(); ++i)
      worst = std::max(worst, std::abs(banded.values()[i] - dense.values()[i]));
  }
  const double secs = seconds_since(t0);
  return {worst < kMlpgTol && secs < kMlpgSeconds,
          fmt::format("100 problems, max abs err {:.3e}, {:.2f} s", worst, secs)};
}

// ---------------------------------------------------------------------------

WindowSet random_dyadic_windows(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(2, 4), offset(-3, 3), eighths(-16, 16), nwin(1, 3);
  WindowSet ws;
  ws.windows.push_back({{0, 1.0}});
  const int n = nwin(rng);
  for (int w = 0; w < n; ++w) {
    Stencil s;
    double total = 0.0;
    const int taps = count(rng);
    for (int k = 0; k + 1 < taps; ++k) {
      const double c = eighths(rng) / 8.0;
      s.push_back({offset(rng), c});
      total += c;
    }
    s.push_back({offset(rng), -total});
    ws.windows.push_back(std::move(s));
  }
  return ws;
}

Outcome expansion_oracle() {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> frames(1, 64), dims(1, 4);
  int mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const WindowSet ws = trial % 2 == 0 ? WindowSet::standard() : random_dyadic_windows(rng);
    const std::size_t T = frames(rng), D = dims(rng);
    const Matrix c = testing::random_matrix(T, D, rng, -10.0, 10.0);
    const Matrix o = expand_trajectory(c, build_window_matrix(T, ws));
    if (!bitwise_equal(o, oracle::dense_expand(c, ws))) ++mismatches;
    if (!bitwise_equal(o, oracle::stencil_expand(c, ws))) ++mismatches;
  }
  return {mismatches == 0, fmt::format("50 cases, {} bitwise mismatches", mismatches)};
}

// ---------------------------------------------------------------------------

Outcome sigma_optimality() {
  std::mt19937_64 rng(41);
  std::uniform_int_distribution<std::size_t> frames(2, 80), dims(1, 4);
  double worst_gap = 0.0, worst_increase = -std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = frames(rng), D = dims(rng);
    const WindowSet ws = WindowSet::standard();
    const WindowMatrix W = build_window_matrix(T, ws);
    const Matrix pred = testing::random_matrix(T, D, rng), ref = testing::random_matrix(T, D, rng);
    TiedCovariance old;
    old.variances = testing::random_vector(3 * D, rng, 0.01, 5.0);

    ResidualAccumulator acc(3 * D);
    Tape tape;
    trajectory_nll(tape.variable(to_channels(pred)), ref, old, W, &acc);
    const TiedCovariance upd = update_tied_covariance(acc);
    worst_increase =
        std::max(worst_increase, trajectory_nll_value(pred, ref, upd, W) - trajectory_nll_value(pred, ref, old, W));

    Matrix resid = oracle::dense_expand(ref, ws);
    const Matrix o = oracle::dense_expand(pred, ws);
    for (std::size_t i = 0; i < resid.values().size(); ++i) resid.values()[i] -= o.values()[i];
    for (std::size_t k = 0; k < 3 * D; ++k) {
      std::vector<double> r(T);
      for (std::size_t t = 0; t < T; ++t) r[t] = resid(t, k);
      const auto f = [&](double v) { return oracle::coordinate_nll(r, v); };
      const double best = oracle::grid_minimize(f, 1e-6, 20.0);
      worst_gap = std::max(worst_gap, std::abs(f(upd.variances[k]) - f(best)));
    }
  }
  return {worst_gap <= kSigmaNllTol && worst_increase <= 0.0,
          fmt::format("20 sets, max |NLL - grid NLL| {:.3e}, max NLL change {:.3e}", worst_gap, worst_increase)};
}

// ---------------------------------------------------------------------------

TrainConfig overfit_config() {
  TrainConfig cfg;
  cfg.mode = ModelKind::proposed;
  cfg.epochs = 450;
  cfg.seed = 3;
  cfg.adam.learning_rate = 1e-3;
  cfg.sigma_warmup_epochs = 150;
  cfg.learning_rate_after_warmup = 3e-4;
  cfg.model.frontend_widths = {64, 64, 64};
  cfg.model.channels = 64;
  cfg.model.residual_blocks = 9;
  cfg.model.dropout = 0.0;
  cfg.model.segment_frames = 240;
  cfg.model.overlap_frames = 20;
  return cfg;
}

const Corpus& overfit_corpus() {
  static const Corpus corpus = make_synthetic_corpus(7, 2, 1200);
  return corpus;
}

struct OverfitRun {
  TrainResult result;
  std::vector<std::uint8_t> wav;
  double seconds = 0.0;
};

OverfitRun run_overfit() {
  const auto t0 = Clock::now();
  OverfitRun run;
  run.result = train(overfit_corpus(), overfit_config());
  run.seconds = seconds_since(t0);
  run.wav = wav_bytes(synthesize(run.result.checkpoint, overfit_corpus().items[0].score).waveform);
  return run;
}

const OverfitRun& first_overfit() {
  static const OverfitRun run = run_overfit();
  return run;
}

Outcome overfit() {
  const OverfitRun& run = first_overfit();
  const auto& loss = run.result.epoch_loss;
  const double first = loss.front(), last = loss.back();
  const bool dropped = last <= first - kOverfitNllDrop * std::abs(first);

  const Corpus& corpus = overfit_corpus();
  const std::size_t M = corpus.layout.mgc;
  std::vector<double> lo(M, std::numeric_limits<double>::infinity()), hi(M, -lo[0]);
  for (const CorpusItem& item : corpus.items)
    for (std::size_t t = 0; t < item.features.rows(); ++t)
      for (std::size_t d = 0; d < M; ++d) {
        lo[d] = std::min(lo[d], item.features(t, d));
        hi[d] = std::max(hi[d], item.features(t, d));
      }
  const EvalReport report = evaluate(run.result.checkpoint, corpus);
  double worst = 0.0, mean = 0.0;
  for (std::size_t d = 0; d < M; ++d) {
    const double frac = report.rms[d] / (hi[d] - lo[d]);
    worst = std::max(worst, frac);
    mean += frac / static_cast<double>(M);
  }
  const bool fits = worst < kOverfitRmsFraction;
  return {dropped && fits && run.seconds < kOverfitSeconds,
          fmt::format("{} epochs, NLL {:.1f} -> {:.1f}, mgc RMS/range max {:.2f}% mean {:.2f}%, {:.0f} s",
                      loss.size(), first, last, 100.0 * worst, 100.0 * mean, run.seconds)};
}

// ---------------------------------------------------------------------------

Outcome vibrato_fidelity() {
  const double shift = 0.005, base = 440.0;
  const std::size_t T = 400;
  F0Track f0{std::vector<double>(T, base), shift};
  const VibratoSection section{0, T - 1, std::vector<double>(T, 100.0), std::vector<double>(T, 6.0)};
  const F0Track out = apply_vibrato(f0, {section});

  std::vector<double> cents(T);
  for (std::size_t t = 0; t < T; ++t) cents[t] = 1200.0 * std::log2(out.hz[t] / base);

  // Parabolic interpolation around each local extremum.
  double peak = 0.0;
  for (std::size_t t = 1; t + 1 < T; ++t) {
    const double a = cents[t - 1], b = cents[t], c = cents[t + 1];
    if ((b > a && b >= c) || (b < a && b <= c)) {
      const double curv = a - 2.0 * b + c;
      const double offset = 0.5 * (a - c) / curv;
      peak = std::max(peak, std::abs(b - 0.25 * (a - c) * offset));
    }
  }

  // Linearly interpolated zero crossings.
  std::vector<double> crossings;
  for (std::size_t t = 0; t + 1 < T; ++t) {
    const double a = cents[t], b = cents[t + 1];
    if (a == 0.0) {
      if (t > 0 && cents[t - 1] != 0.0) crossings.push_back(static_cast<double>(t) * shift);
    } else if (a * b < 0.0) {
      crossings.push_back((static_cast<double>(t) + a / (a - b)) * shift);
    }
  }
  double freq = 0.0;
  if (crossings.size() >= 3)
    freq = 0.5 * static_cast<double>(crossings.size() - 1) / (crossings.back() - crossings.front());

  const bool pass = std::abs(peak - 100.0) <= kVibratoCentsTol && std::abs(freq - 6.0) <= kVibratoHzTol;
  return {pass, fmt::format("peak {:.3f} cents, frequency {:.4f} Hz over {} zero crossings", peak, freq,
                            crossings.size())};
}

// ---------------------------------------------------------------------------

Outcome segment_sizes() {
  const ModelCheckpoint& ckpt = first_overfit().result.checkpoint;
  const Score& score = overfit_corpus().items[0].score;
  const std::size_t T = score.frame_count(), D = ckpt.layout.dim(), O = ckpt.model.overlap_frames;
  const CnnAcousticModel model(ckpt.model, ckpt.params);
  const std::vector<double> w = crossfade_weights(O);

  bool ok = true;
  std::size_t overlap_frames = 0, contract_failures = 0;
  std::vector<std::string> counts;
  for (std::size_t length : {200, 400, 1000}) {
    const FeaturePrediction p = predict_features(ckpt, score, {length, O});
    const bool valid = p.features.rows() == T && p.features.cols() == D &&
                       std::ranges::all_of(p.features.values(), [](double v) { return std::isfinite(v); }) &&
                       std::ranges::all_of(p.normalized.values(), [](double v) { return v >= 0.0 && v <= 1.0; });
    ok = ok && valid;

    const auto segs = plan_generation_segments(T, length, O, model.min_frames());
    counts.push_back(fmt::format("{}:{}", length, segs.size()));
    std::vector<Matrix> outs;
    for (const Segment& s : segs)
      outs.push_back(
          model.infer(p.input.frames.slice_rows(s.begin, s.end), std::span(p.input.note_pitch).subspan(s.begin, s.length())));
    for (std::size_t i = 1; i < segs.size(); ++i)
      for (std::size_t k = 0; k < O; ++k) {
        ++overlap_frames;
        for (std::size_t d = 0; d < D; ++d) {
          const double a = outs[i - 1](outs[i - 1].rows() - O + k, d), b = outs[i](k, d);
          if (p.normalized(segs[i].begin + k, d) != b + w[k] * (a - b)) {
            ++contract_failures;
            break;
          }
        }
      }
  }
  return {ok && contract_failures == 0 && overlap_frames > 0,
          fmt::format("T {} frames, segments {}, {} overlap frames checked, {} contract failures", T,
                      fmt::join(counts, " "), overlap_frames, contract_failures)};
}

// ---------------------------------------------------------------------------

Outcome vocoder_sanity() {
  const std::size_t order = 24, frames = 8;
  const double sr = 48000.0, shift = 0.005;
  std::vector<double> x(frames * hop_samples(sr, shift), 0.0);
  x[0] = 1.0;
  const WaveformBuffer y = mlsa_filter(x, Matrix(frames, order + 1, 0.0), 0.55, sr, shift);
  double total = 0.0;
  for (double s : y.samples) total += s * s;
  const double lag0 = y.samples[0] * y.samples[0] / total;

  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double v = -1.0 + 2.0 * i / 9999.0;
    worst = std::max(worst, std::abs(mulaw_compress(v) - mulaw_compress(mulaw_decode(mulaw_encode(v)))));
  }

  const std::vector<std::uint8_t> expected{
      'R', 'I', 'F', 'F', 42, 0, 0, 0, 'W', 'A', 'V', 'E', 'f', 'm', 't', ' ', 16, 0, 0, 0, 1, 0, 1, 0,
      0x40, 0x1F, 0, 0, 0x80, 0x3E, 0, 0, 2, 0, 16, 0, 'd', 'a', 't', 'a', 6, 0, 0, 0,
      0x00, 0x00, 0xFF, 0x7F, 0x01, 0x80};
  const bool wav_ok = wav_bytes({{0.0, 1.0, -1.0}, 8000.0}) == expected;

  return {lag0 > kImpulseEnergy && worst <= kMulawTol && wav_ok,
          fmt::format("impulse energy at lag 0 {:.6f}, mu-law max companded error {:.3e} (bound {:.3e}), "
                      "WAV fixture {}",
                      lag0, worst, kMulawTol, wav_ok ? "matches" : "differs")};
}

// ---------------------------------------------------------------------------

Outcome smoothness_proxy() {
  const Corpus& corpus = overfit_corpus();
  TrainConfig bcfg = overfit_config();
  bcfg.mode = ModelKind::baseline;
  bcfg.epochs = 200;
  bcfg.sigma_warmup_epochs = 0;
  bcfg.learning_rate_after_warmup = 0.0;
  bcfg.model.dropout = 0.2;
  const TrainResult baseline = train(corpus, bcfg);

  const Corpus held_out = make_synthetic_corpus(1234, 1, 1200);
  const CorpusItem& item = held_out.items[0];
  const std::size_t M = corpus.layout.mgc;
  const double ref = mean_abs_delta(item.features, 0, M);
  const FeaturePrediction prop = predict_features(first_overfit().result.checkpoint, item.score);
  const FeaturePrediction base = predict_features(baseline.checkpoint, item.score);
  const double proposed = mean_abs_delta(prop.features, 0, M);
  const double mlpg = mean_abs_delta(base.features, 0, M);
  const double raw = mean_abs_delta(base.raw_static, 0, M);

  const auto within = [ref](double v) { return v <= kSmoothnessFactor * ref && v >= ref / kSmoothnessFactor; };
  return {within(proposed) && within(mlpg) && !within(raw),
          fmt::format("mean |delta| mgc: reference {:.5f}, proposed {:.5f} ({}), baseline MLPG {:.5f} ({}), "
                      "baseline raw {:.5f} ({}, must be outside)",
                      ref, proposed, within(proposed) ? "within 2x" : "outside", mlpg,
                      within(mlpg) ? "within 2x" : "outside", raw, within(raw) ? "within 2x" : "outside")};
}

// ---------------------------------------------------------------------------

Outcome determinism() {
  const OverfitRun& a = first_overfit();
  const OverfitRun b = run_overfit();
  const auto& la = a.result.epoch_loss;
  const auto& lb = b.result.epoch_loss;
  const bool same_loss =
      la.size() == lb.size() && std::memcmp(la.data(), lb.data(), la.size() * sizeof(double)) == 0;
  const bool same_wav = a.wav == b.wav;
  return {same_loss && same_wav, fmt::format("loss log {} ({} epochs), WAV {} ({} bytes)",
                                             same_loss ? "identical" : "differs", la.size(),
                                             same_wav ? "identical" : "differs", a.wav.size())};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"MLPG oracle equivalence", mlpg_oracle},
      {"trajectory expansion oracle", expansion_oracle},
      {"covariance update optimality", sigma_optimality},
      {"overfit run", overfit},
      {"vibrato fidelity", vibrato_fidelity},
      {"segment-size adjustability", segment_sizes},
      {"vocoder sanity", vocoder_sanity},
      {"smoothness proxy", smoothness_proxy},
      {"determinism", determinism},
  };

  std::set<std::size_t> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::stoul(argv[i]));

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected.empty() && !selected.contains(i + 1)) continue;
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, fmt::format("exception: {}", e.what())};
    }
    if (!r.pass) ++failures;
    fmt::print("{:2} {} {}: {}\n", i + 1, r.pass ? "PASS" : "FAIL", criteria[i].first, r.detail);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
