#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csvs/matrix.hpp"

namespace csvs {

struct PhoneSpan {
  std::string symbol;
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // exclusive

  bool operator==(const PhoneSpan&) const = default;
};

enum class EventKind { note, rest };

struct NoteEvent {
  EventKind kind = EventKind::note;
  std::optional<int> midi_pitch;  // absent for rests
  std::size_t start_frame = 0;
  std::size_t end_frame = 0;  // exclusive
  std::vector<PhoneSpan> phones;

  bool is_rest() const { return kind == EventKind::rest; }
  std::size_t length() const { return end_frame - start_frame; }

  bool operator==(const NoteEvent&) const = default;
};

// A musical score with frame-level phone alignment.
//
// Events tile [0, frame_count()) contiguously. Note phones tile their note;
// rests carry no phones.
struct Score {
  double tempo_bpm = 120.0;
  double frame_shift_s = 0.005;
  std::vector<NoteEvent> events;

  std::size_t frame_count() const { return events.empty() ? 0 : events.back().end_frame; }

  bool operator==(const Score&) const = default;
};

// Throws DataError on any invariant violation.
void validate_score(const Score& score);

Score parse_score(std::string_view json_text);
std::string score_to_json(const Score& score);

double midi_to_hz(int midi);
double midi_to_log_hz(int midi);

// Log-Hz note pitch per frame. Rests between notes are a linear ramp from the
// preceding note value (held on the first rest frame) to the following note
// value; leading and trailing rests hold the nearest note.
std::vector<double> interpolate_note_logf0(const Score& score);

// Numeric context features the encoder knows about.
//   note_pitch      MIDI number of the current note (0 on rests)
//   pos_in_phone    (t - phone start) / phone length (0 on rests)
//   pos_in_note     (t - event start) / event length
//   note_duration   event length in frames
//   phone_duration  phone length in frames (0 on rests)
//   phone_count     number of phones in the current note
// Binary context features:
//   phone           one-hot over the phone inventory (all zero on rests)
//   rest            1 on rest frames
//   pitch_class     one-hot over the 12 pitch classes (all zero on rests)
struct FeatureConfig {
  std::vector<std::string> phone_inventory;
  std::vector<std::string> numeric_features{"note_pitch", "pos_in_phone", "pos_in_note",
                                            "note_duration", "phone_duration"};
  std::vector<std::string> binary_features{"phone", "rest"};

  std::size_t input_dim() const;
  bool operator==(const FeatureConfig&) const = default;
};

// Raw (unnormalized) T x D_in context matrix. Binary blocks come first in the
// configured order, then numeric features.
Matrix encode_contexts(const Score& score, const FeatureConfig& cfg);

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

inline constexpr Range kInputRange{0.00, 1.00};
inline constexpr Range kOutputRange{0.01, 0.99};

// Per-dimension minimum and maximum.
struct DimStats {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t dim() const { return min.size(); }
  bool is_constant(std::size_t d) const { return max[d] == min[d]; }
  bool operator==(const DimStats&) const = default;
};

struct NormStats {
  DimStats input;   // context features
  DimStats pitch;   // interpolated note log-F0 (one dimension)
  DimStats output;  // acoustic features

  bool operator==(const NormStats&) const = default;
};

// Min/max over the rows of every matrix. Throws DataError on an empty set or
// inconsistent widths.
DimStats fit_dim_stats(std::span<const Matrix> matrices);

NormStats fit_norm_stats(std::span<const Matrix> inputs, std::span<const std::vector<double>> pitch,
                         std::span<const Matrix> outputs);

// Affine map of [min, max] onto [lo, hi]; constant dimensions go to (lo+hi)/2.
Matrix normalize(const Matrix& m, const DimStats& stats, Range range);
// Inverse map; constant dimensions return their single recorded value.
Matrix denormalize(const Matrix& m, const DimStats& stats, Range range);

// Model-ready input for one score.
struct ScoreFeatureSequence {
  Matrix frames;                  // T x D_in, clamped into [0, 1]
  std::vector<double> note_logf0;  // T, log Hz (unnormalized)
  std::vector<double> note_pitch;  // T, normalized into [0, 1]

  std::size_t length() const { return frames.rows(); }
};

ScoreFeatureSequence make_score_features(const Score& score, const FeatureConfig& cfg,
                                         const NormStats& stats);

}  // namespace csvs
