#include "csvs/synthesis.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "csvs/error.hpp"

namespace csvs {

F0Track reconstruct_logf0(std::span<const double> diff, std::span<const double> note_logf0,
                          std::span<const double> vuv_flag, double frame_shift) {
  if (diff.size() != note_logf0.size() || diff.size() != vuv_flag.size())
    throw DataError(fmt::format("reconstruct_logf0: lengths {}, {}, {} differ", diff.size(), note_logf0.size(),
                                vuv_flag.size()));
  F0Track f0{std::vector<double>(diff.size(), 0.0), frame_shift};
  for (std::size_t t = 0; t < diff.size(); ++t)
    if (vuv_flag[t] > 0.5) f0.hz[t] = std::clamp(std::exp(note_logf0[t] + diff[t]), kMinF0, kMaxF0);
  return f0;
}

F0Track apply_vibrato(const F0Track& f0, const std::vector<VibratoSection>& sections) {
  std::vector<const VibratoSection*> order;
  for (const VibratoSection& s : sections) {
    if (s.start > s.end || s.end >= f0.size())
      throw DataError(fmt::format("vibrato section [{}, {}] outside a {}-frame track", s.start, s.end, f0.size()));
    const std::size_t n = s.end - s.start + 1;
    if (s.amplitude_cents.size() != n || s.frequency_hz.size() != n)
      throw DataError("vibrato section: parameter tracks do not match its length");
    order.push_back(&s);
  }
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->start < b->start; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->start <= order[i - 1]->end) throw DataError("vibrato sections overlap");

  F0Track out = f0;
  for (const VibratoSection* s : order) {
    for (std::size_t t = s->start; t <= s->end; ++t) {
      if (out.hz[t] <= 0.0) continue;
      const std::size_t k = t - s->start;
      const double v = s->amplitude_cents[k] *
                       std::sin(2.0 * std::numbers::pi * s->frequency_hz[k] * f0.frame_shift * static_cast<double>(k));
      out.hz[t] *= std::exp2(v / 1200.0);
    }
  }
  return out;
}

std::vector<VibratoSection> find_vibrato_sections(std::span<const double> amplitude_cents,
                                                  std::span<const double> frequency_hz,
                                                  std::span<const double> flag) {
  if (amplitude_cents.size() != frequency_hz.size() || amplitude_cents.size() != flag.size())
    throw DataError("find_vibrato_sections: track lengths differ");
  std::vector<VibratoSection> sections;
  const std::size_t T = flag.size();
  std::size_t t = 0;
  while (t < T) {
    if (!(flag[t] > 0.5 && amplitude_cents[t] > 1.0)) {
      ++t;
      continue;
    }
    VibratoSection s;
    s.start = t;
    while (t < T && flag[t] > 0.5 && amplitude_cents[t] > 1.0) {
      s.amplitude_cents.push_back(amplitude_cents[t]);
      s.frequency_hz.push_back(frequency_hz[t]);
      ++t;
    }
    s.end = t - 1;
    sections.push_back(std::move(s));
  }
  return sections;
}

std::size_t hop_samples(double sample_rate, double frame_shift) {
  const double hop = std::round(sample_rate * frame_shift);
  if (!(hop >= 1.0)) throw ConfigError("frame shift is shorter than one sample");
  return static_cast<std::size_t>(hop);
}

std::vector<double> generate_excitation(const F0Track& f0, double sample_rate, std::uint64_t seed) {
  const std::size_t hop = hop_samples(sample_rate, f0.frame_shift);
  std::vector<double> x(f0.size() * hop, 0.0);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  double pc = 0.0;
  bool started = false;
  for (std::size_t t = 0; t < f0.size(); ++t) {
    const double f = f0.hz[t];
    double* out = x.data() + t * hop;
    if (f <= 0.0) {
      for (std::size_t n = 0; n < hop; ++n) out[n] = noise(rng);
      continue;
    }
    const double period = sample_rate / f;
    if (!started) {
      pc = period - 1.0;  // first voiced sample carries a pulse
      started = true;
    }
    for (std::size_t n = 0; n < hop; ++n) {
      pc += 1.0;
      if (pc >= period) {
        out[n] = std::sqrt(period);
        pc -= period;
      }
    }
  }
  return x;
}

namespace {

constexpr std::array<double, kPadeOrder + 1> kPade{1.0,         0.4999391,   0.1107098,
                                                   0.01369984, 0.0009564853, 0.00003041721};

// FIR part of the second stage; d holds m + 2 delays.
double mlsafir(double x, std::span<const double> b, std::size_t m, double a, double aa, double* d) {
  d[0] = x;
  d[1] = aa * d[0] + a * d[1];
  for (std::size_t i = 2; i <= m; ++i) d[i] += a * (d[i + 1] - d[i - 1]);
  double y = 0.0;
  for (std::size_t i = 2; i <= m; ++i) y += d[i] * b[i];
  for (std::size_t i = m + 1; i > 1; --i) d[i] = d[i - 1];
  return y;
}

}  // namespace

MlsaFilter::MlsaFilter(std::size_t order, double alpha) : m_(order), alpha_(alpha) {
  if (!(alpha > -1.0 && alpha < 1.0)) throw ConfigError(fmt::format("mlsa: alpha {} outside (-1, 1)", alpha));
  reset();
}

void MlsaFilter::reset() {
  constexpr std::size_t pd = kPadeOrder;
  d_.assign(3 * (pd + 1) + pd * (m_ + 2), 0.0);
}

double MlsaFilter::process(double x, std::span<const double> b) {
  constexpr std::size_t pd = kPadeOrder;
  const double a = alpha_, aa = 1.0 - a * a;
  x *= std::exp(b[0]);

  // First stage: exponential of the b(1) term.
  {
    double* d = d_.data();
    double* pt = d + pd + 1;
    double out = 0.0;
    for (std::size_t i = pd; i >= 1; --i) {
      d[i] = aa * pt[i - 1] + a * d[i];
      pt[i] = d[i] * (m_ >= 1 ? b[1] : 0.0);
      const double v = pt[i] * kPade[i];
      x += (i & 1) ? v : -v;
      out += v;
    }
    pt[0] = x;
    x += out;
  }
  // Second stage: exponential of the remaining terms.
  if (m_ >= 2) {
    double* d = d_.data() + 2 * (pd + 1);
    double* pt = d + pd * (m_ + 2);
    double out = 0.0;
    for (std::size_t i = pd; i >= 1; --i) {
      pt[i] = mlsafir(pt[i - 1], b, m_, a, aa, d + (i - 1) * (m_ + 2));
      const double v = pt[i] * kPade[i];
      x += (i & 1) ? v : -v;
      out += v;
    }
    pt[0] = x;
    x += out;
  }
  return x;
}

std::vector<double> mc2b(std::span<const double> mc, double alpha) {
  std::vector<double> b(mc.begin(), mc.end());
  if (b.empty()) return b;
  for (std::size_t i = b.size() - 1; i-- > 0;) b[i] = mc[i] - alpha * b[i + 1];
  return b;
}

WaveformBuffer mlsa_filter(std::span<const double> excitation, const Matrix& melcep, double alpha,
                           double sample_rate, double frame_shift) {
  if (melcep.cols() < 1) throw DataError("mlsa: need at least one cepstral coefficient");
  const std::size_t hop = hop_samples(sample_rate, frame_shift);
  const std::size_t T = melcep.rows();
  if (excitation.size() != T * hop)
    throw DataError(fmt::format("mlsa: {} excitation samples for {} frames of {}", excitation.size(), T, hop));

  WaveformBuffer w{std::vector<double>(excitation.size(), 0.0), sample_rate};
  if (T == 0) return w;
  std::vector<std::vector<double>> b(T);
  for (std::size_t t = 0; t < T; ++t) b[t] = mc2b(melcep.row(t), alpha);

  MlsaFilter filter(melcep.cols() - 1, alpha);
  std::vector<double> cur(melcep.cols());
  const double half = 0.5 * static_cast<double>(hop);
  for (std::size_t n = 0; n < excitation.size(); ++n) {
    // Frame t is centred at sample (t + 0.5) * hop.
    const double pos = (static_cast<double>(n) - half + 0.5) / static_cast<double>(hop);
    if (pos <= 0.0) {
      std::copy(b[0].begin(), b[0].end(), cur.begin());
    } else if (pos >= static_cast<double>(T - 1)) {
      std::copy(b[T - 1].begin(), b[T - 1].end(), cur.begin());
    } else {
      const auto i = static_cast<std::size_t>(pos);
      const double f = pos - static_cast<double>(i);
      for (std::size_t k = 0; k < cur.size(); ++k) cur[k] = b[i][k] + f * (b[i + 1][k] - b[i][k]);
    }
    const double y = filter.process(excitation[n], cur);
    if (!std::isfinite(y))
      throw NumericalError(fmt::format("mlsa: non-finite output at sample {} (frame {})", n, n / hop));
    w.samples[n] = y;
  }
  return w;
}

void finalize_waveform(WaveformBuffer& w, double peak) {
  double m = 0.0;
  for (double s : w.samples) m = std::max(m, std::abs(s));
  if (m > peak)
    for (double& s : w.samples) s *= peak / m;
  for (double& s : w.samples) s = std::clamp(s, -1.0, 1.0);
}

double mulaw_compress(double x, int mu) {
  if (!(std::abs(x) <= 1.0)) throw DataError(fmt::format("mu-law: sample {} outside [-1, 1]", x));
  const double m = static_cast<double>(mu);
  return std::copysign(std::log1p(m * std::abs(x)) / std::log1p(m), x);
}

int mulaw_encode(double x, int mu, int bits) {
  const double y = mulaw_compress(x, mu);
  const int levels = 1 << bits;
  const int code = static_cast<int>(std::floor((y + 1.0) * 0.5 * levels));
  return std::clamp(code, 0, levels - 1);
}

double mulaw_decode(int code, int mu, int bits) {
  const int levels = 1 << bits;
  if (code < 0 || code >= levels) throw DataError(fmt::format("mu-law: code {} outside [0, {})", code, levels));
  const double y = (code + 0.5) * 2.0 / levels - 1.0;
  const double m = static_cast<double>(mu);
  return std::copysign(std::expm1(std::abs(y) * std::log1p(m)) / m, y);
}

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

}  // namespace

std::vector<std::uint8_t> wav_bytes(const WaveformBuffer& w) {
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_size = static_cast<std::uint32_t>(w.samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  put_tag(out, "data");
  put_u32(out, data_size);
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw NumericalError("wav: non-finite sample");
    const auto v = static_cast<std::int16_t>(std::lround(std::clamp(s, -1.0, 1.0) * 32767.0));
    put_u16(out, static_cast<std::uint16_t>(v));
  }
  return out;
}

void write_wav(const WaveformBuffer& w, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = wav_bytes(w);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open {} for writing", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError(fmt::format("write to {} failed", path.string()));
}

}  // namespace csvs
