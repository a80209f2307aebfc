#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "csvs/matrix.hpp"

namespace csvs {

struct F0Track {
  std::vector<double> hz;  // 0 marks an unvoiced frame
  double frame_shift = 0.005;

  std::size_t size() const { return hz.size(); }
};

inline constexpr double kMinF0 = 20.0;
inline constexpr double kMaxF0 = 2000.0;

struct VibratoSection {
  std::size_t start = 0;  // first frame
  std::size_t end = 0;    // last frame, inclusive
  std::vector<double> amplitude_cents;  // one value per frame of the section
  std::vector<double> frequency_hz;
};

struct WaveformBuffer {
  std::vector<double> samples;
  double sample_rate = 48000.0;
};

// Voiced where flag > 0.5, F0 = exp(note + diff) clamped to [kMinF0, kMaxF0].
F0Track reconstruct_logf0(std::span<const double> diff, std::span<const double> note_logf0,
                          std::span<const double> vuv_flag, double frame_shift = 0.005);

// v(t) = m_a(t) sin(2 pi m_f(t) frame_shift (t - start)) cents, applied as
// F0 * 2^(v / 1200) on voiced frames of each section.
F0Track apply_vibrato(const F0Track& f0, const std::vector<VibratoSection>& sections);

// Maximal runs with flag > 0.5 and amplitude > 1 cent.
std::vector<VibratoSection> find_vibrato_sections(std::span<const double> amplitude_cents,
                                                  std::span<const double> frequency_hz,
                                                  std::span<const double> flag);

// Pulse train of amplitude sqrt(sr / F0) on voiced frames, unit-variance
// Gaussian noise on unvoiced frames. The period counter carries across frames.
std::vector<double> generate_excitation(const F0Track& f0, double sample_rate, std::uint64_t seed = 1);

inline constexpr int kPadeOrder = 5;

// Mel log spectrum approximation filter with a 5th-order Pade exponential.
class MlsaFilter {
 public:
  MlsaFilter(std::size_t order, double alpha);

  // b: order + 1 filter coefficients (see mc2b). b[0] is the log gain.
  double process(double x, std::span<const double> b);
  void reset();

 private:
  std::size_t m_;
  double alpha_;
  std::vector<double> d_;
};

// Mel-cepstrum to MLSA filter coefficients.
std::vector<double> mc2b(std::span<const double> mc, double alpha);

// melcep: T x (order + 1). Coefficients are interpolated linearly between
// frame centres. Throws NumericalError on a non-finite sample.
WaveformBuffer mlsa_filter(std::span<const double> excitation, const Matrix& melcep, double alpha,
                           double sample_rate, double frame_shift);

// Samples per frame, rounded.
std::size_t hop_samples(double sample_rate, double frame_shift);

// Scales down to the given peak if exceeded, then clips to [-1, 1].
void finalize_waveform(WaveformBuffer& w, double peak = 0.95);

// Offset-binary companding codes in [0, 2^bits).
int mulaw_encode(double x, int mu = 255, int bits = 8);
double mulaw_decode(int code, int mu = 255, int bits = 8);
double mulaw_compress(double x, int mu = 255);

// 16-bit PCM mono RIFF/WAVE with the canonical 44-byte header.
std::vector<std::uint8_t> wav_bytes(const WaveformBuffer& w);
void write_wav(const WaveformBuffer& w, const std::filesystem::path& path);

}  // namespace csvs
