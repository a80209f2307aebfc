#include "csvs/score.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>
#include <json.hpp>

#include "csvs/error.hpp"

namespace csvs {

namespace {

using nlohmann::json;

std::size_t frame_field(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number_integer())
    throw DataError(fmt::format("score: missing or non-integer \"{}\"", key));
  const auto v = j.at(key).get<long long>();
  if (v < 0) throw DataError(fmt::format("score: negative \"{}\"", key));
  return static_cast<std::size_t>(v);
}

std::size_t index_of(const std::vector<std::string>& names, const std::string& s) {
  const auto it = std::find(names.begin(), names.end(), s);
  return it == names.end() ? names.size() : static_cast<std::size_t>(it - names.begin());
}

}  // namespace

void validate_score(const Score& score) {
  if (score.events.empty()) throw DataError("score: no events");
  if (!(score.frame_shift_s > 0.0)) throw DataError("score: frame_shift_s must be positive");
  std::size_t expected_start = 0;
  for (std::size_t i = 0; i < score.events.size(); ++i) {
    const NoteEvent& ev = score.events[i];
    if (ev.end_frame <= ev.start_frame)
      throw DataError(fmt::format("score: event {} covers no frames", i));
    if (ev.start_frame < expected_start)
      throw DataError(fmt::format("score: overlapping events at event {}", i));
    if (ev.start_frame > expected_start)
      throw DataError(fmt::format("score: gap before event {}", i));
    expected_start = ev.end_frame;

    if (ev.is_rest()) {
      if (ev.midi_pitch) throw DataError(fmt::format("score: rest {} has a pitch", i));
      if (!ev.phones.empty()) throw DataError(fmt::format("score: rest {} has phones", i));
      continue;
    }
    if (!ev.midi_pitch) throw DataError(fmt::format("score: note {} has no pitch", i));
    if (*ev.midi_pitch < 0 || *ev.midi_pitch > 127)
      throw DataError(fmt::format("score: note {} pitch {} outside [0, 127]", i, *ev.midi_pitch));
    std::size_t cursor = ev.start_frame;
    for (const PhoneSpan& ph : ev.phones) {
      if (ph.start_frame != cursor || ph.end_frame <= ph.start_frame)
        throw DataError(fmt::format("score: phones do not tile note {}", i));
      cursor = ph.end_frame;
    }
    if (cursor != ev.end_frame) throw DataError(fmt::format("score: phones do not tile note {}", i));
  }
}

Score parse_score(std::string_view json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw DataError(std::string("score: malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw DataError("score: top level must be an object");

  Score score;
  if (doc.contains("tempo_bpm")) {
    if (!doc["tempo_bpm"].is_number()) throw DataError("score: tempo_bpm must be a number");
    score.tempo_bpm = doc["tempo_bpm"].get<double>();
  }
  if (doc.contains("frame_shift_s")) {
    if (!doc["frame_shift_s"].is_number()) throw DataError("score: frame_shift_s must be a number");
    score.frame_shift_s = doc["frame_shift_s"].get<double>();
  }
  if (!doc.contains("events") || !doc["events"].is_array())
    throw DataError("score: missing \"events\" array");

  for (const json& je : doc["events"]) {
    if (!je.is_object()) throw DataError("score: event must be an object");
    NoteEvent ev;
    const std::string kind = je.value("kind", std::string{});
    if (kind == "note") {
      ev.kind = EventKind::note;
    } else if (kind == "rest") {
      ev.kind = EventKind::rest;
    } else {
      throw DataError(fmt::format("score: unknown event kind \"{}\"", kind));
    }
    if (je.contains("midi") && !je["midi"].is_null()) {
      if (!je["midi"].is_number_integer()) throw DataError("score: midi must be an integer");
      ev.midi_pitch = je["midi"].get<int>();
    }
    ev.start_frame = frame_field(je, "start_frame");
    ev.end_frame = frame_field(je, "end_frame");
    if (je.contains("phones")) {
      if (!je["phones"].is_array()) throw DataError("score: phones must be an array");
      for (const json& jp : je["phones"]) {
        if (!jp.is_object() || !jp.contains("sym") || !jp["sym"].is_string())
          throw DataError("score: phone entries need a string \"sym\"");
        ev.phones.push_back({jp["sym"].get<std::string>(), frame_field(jp, "start_frame"),
                             frame_field(jp, "end_frame")});
      }
    }
    score.events.push_back(std::move(ev));
  }
  validate_score(score);
  return score;
}

std::string score_to_json(const Score& score) {
  json doc;
  doc["tempo_bpm"] = score.tempo_bpm;
  doc["frame_shift_s"] = score.frame_shift_s;
  doc["events"] = json::array();
  for (const NoteEvent& ev : score.events) {
    json je;
    je["kind"] = ev.is_rest() ? "rest" : "note";
    if (ev.midi_pitch) je["midi"] = *ev.midi_pitch;
    je["start_frame"] = ev.start_frame;
    je["end_frame"] = ev.end_frame;
    je["phones"] = json::array();
    for (const PhoneSpan& ph : ev.phones)
      je["phones"].push_back({{"sym", ph.symbol}, {"start_frame", ph.start_frame}, {"end_frame", ph.end_frame}});
    doc["events"].push_back(std::move(je));
  }
  return doc.dump(1);
}

double midi_to_hz(int midi) { return 440.0 * std::pow(2.0, (midi - 69) / 12.0); }

double midi_to_log_hz(int midi) { return std::log(midi_to_hz(midi)); }

std::vector<double> interpolate_note_logf0(const Score& score) {
  const std::size_t T = score.frame_count();
  std::vector<double> track(T, 0.0);

  const NoteEvent* prev_note = nullptr;
  std::vector<const NoteEvent*> pending_rests;
  for (const NoteEvent& ev : score.events) {
    if (ev.is_rest()) {
      pending_rests.push_back(&ev);
      continue;
    }
    const double value = midi_to_log_hz(*ev.midi_pitch);
    for (std::size_t t = ev.start_frame; t < ev.end_frame; ++t) track[t] = value;

    if (!pending_rests.empty()) {
      const std::size_t s = pending_rests.front()->start_frame;
      const std::size_t e = ev.start_frame;
      if (prev_note == nullptr) {
        std::fill(track.begin() + s, track.begin() + e, value);
      } else {
        const double a = midi_to_log_hz(*prev_note->midi_pitch);
        const double span = static_cast<double>(e - s);
        for (std::size_t t = s; t < e; ++t) track[t] = a + (value - a) * static_cast<double>(t - s) / span;
      }
      pending_rests.clear();
    }
    prev_note = &ev;
  }
  if (prev_note == nullptr) throw DataError("score: cannot interpolate pitch of an all-rest score");
  if (!pending_rests.empty()) {
    const double a = midi_to_log_hz(*prev_note->midi_pitch);
    std::fill(track.begin() + pending_rests.front()->start_frame, track.end(), a);
  }
  return track;
}

std::size_t FeatureConfig::input_dim() const {
  std::size_t d = numeric_features.size();
  for (const std::string& b : binary_features) {
    if (b == "phone") {
      d += phone_inventory.size();
    } else if (b == "rest") {
      d += 1;
    } else if (b == "pitch_class") {
      d += 12;
    } else {
      throw ConfigError(fmt::format("unknown binary feature \"{}\"", b));
    }
  }
  return d;
}

Matrix encode_contexts(const Score& score, const FeatureConfig& cfg) {
  const std::size_t T = score.frame_count();
  Matrix out(T, cfg.input_dim());

  for (const NoteEvent& ev : score.events) {
    const double ev_len = static_cast<double>(ev.length());
    // Per-frame phone lookup for this event.
    std::vector<const PhoneSpan*> phone_at(ev.length(), nullptr);
    for (const PhoneSpan& ph : ev.phones) {
      if (index_of(cfg.phone_inventory, ph.symbol) == cfg.phone_inventory.size())
        throw DataError(fmt::format("unknown phone symbol \"{}\"", ph.symbol));
      for (std::size_t t = ph.start_frame; t < ph.end_frame; ++t) phone_at[t - ev.start_frame] = &ph;
    }

    for (std::size_t t = ev.start_frame; t < ev.end_frame; ++t) {
      auto row = out.row(t);
      const PhoneSpan* ph = phone_at[t - ev.start_frame];
      std::size_t col = 0;
      for (const std::string& b : cfg.binary_features) {
        if (b == "phone") {
          if (ph != nullptr) row[col + index_of(cfg.phone_inventory, ph->symbol)] = 1.0;
          col += cfg.phone_inventory.size();
        } else if (b == "rest") {
          row[col++] = ev.is_rest() ? 1.0 : 0.0;
        } else if (b == "pitch_class") {
          if (!ev.is_rest()) row[col + static_cast<std::size_t>(*ev.midi_pitch % 12)] = 1.0;
          col += 12;
        }
      }
      for (const std::string& n : cfg.numeric_features) {
        double v = 0.0;
        if (n == "note_pitch") {
          v = ev.is_rest() ? 0.0 : static_cast<double>(*ev.midi_pitch);
        } else if (n == "pos_in_phone") {
          if (ph != nullptr)
            v = static_cast<double>(t - ph->start_frame) / static_cast<double>(ph->end_frame - ph->start_frame);
        } else if (n == "pos_in_note") {
          v = static_cast<double>(t - ev.start_frame) / ev_len;
        } else if (n == "note_duration") {
          v = ev_len;
        } else if (n == "phone_duration") {
          if (ph != nullptr) v = static_cast<double>(ph->end_frame - ph->start_frame);
        } else if (n == "phone_count") {
          v = static_cast<double>(ev.phones.size());
        } else {
          throw ConfigError(fmt::format("unknown numeric feature \"{}\"", n));
        }
        row[col++] = v;
      }
    }
  }
  return out;
}

DimStats fit_dim_stats(std::span<const Matrix> matrices) {
  DimStats stats;
  bool any_rows = false;
  for (const Matrix& m : matrices) {
    if (m.rows() == 0) continue;
    if (!any_rows) {
      stats.min.assign(m.cols(), std::numeric_limits<double>::infinity());
      stats.max.assign(m.cols(), -std::numeric_limits<double>::infinity());
      any_rows = true;
    }
    if (m.cols() != stats.dim()) throw DataError("norm stats: inconsistent feature widths");
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t c = 0; c < m.cols(); ++c) {
        stats.min[c] = std::min(stats.min[c], m(r, c));
        stats.max[c] = std::max(stats.max[c], m(r, c));
      }
    }
  }
  if (!any_rows) throw DataError("norm stats: empty corpus");
  return stats;
}

NormStats fit_norm_stats(std::span<const Matrix> inputs, std::span<const std::vector<double>> pitch,
                         std::span<const Matrix> outputs) {
  std::vector<Matrix> pitch_cols;
  pitch_cols.reserve(pitch.size());
  for (const auto& track : pitch) {
    Matrix m(track.size(), 1);
    std::copy(track.begin(), track.end(), m.values().begin());
    pitch_cols.push_back(std::move(m));
  }
  return {fit_dim_stats(inputs), fit_dim_stats(pitch_cols), fit_dim_stats(outputs)};
}

Matrix normalize(const Matrix& m, const DimStats& stats, Range range) {
  if (m.cols() != stats.dim()) throw DataError("normalize: dimension mismatch");
  Matrix out(m.rows(), m.cols());
  const double mid = 0.5 * (range.lo + range.hi);
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const bool constant = stats.is_constant(c);
    const double scale = constant ? 0.0 : (range.hi - range.lo) / (stats.max[c] - stats.min[c]);
    for (std::size_t r = 0; r < m.rows(); ++r)
      out(r, c) = constant ? mid : range.lo + (m(r, c) - stats.min[c]) * scale;
  }
  return out;
}

Matrix denormalize(const Matrix& m, const DimStats& stats, Range range) {
  if (m.cols() != stats.dim()) throw DataError("denormalize: dimension mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t c = 0; c < m.cols(); ++c) {
    const bool constant = stats.is_constant(c);
    const double scale = (stats.max[c] - stats.min[c]) / (range.hi - range.lo);
    for (std::size_t r = 0; r < m.rows(); ++r)
      out(r, c) = constant ? stats.min[c] : stats.min[c] + (m(r, c) - range.lo) * scale;
  }
  return out;
}

ScoreFeatureSequence make_score_features(const Score& score, const FeatureConfig& cfg,
                                         const NormStats& stats) {
  ScoreFeatureSequence seq;
  seq.frames = normalize(encode_contexts(score, cfg), stats.input, kInputRange);
  for (double& v : seq.frames.values()) v = std::clamp(v, kInputRange.lo, kInputRange.hi);

  seq.note_logf0 = interpolate_note_logf0(score);
  Matrix pitch(seq.note_logf0.size(), 1);
  std::copy(seq.note_logf0.begin(), seq.note_logf0.end(), pitch.values().begin());
  pitch = normalize(pitch, stats.pitch, kInputRange);
  seq.note_pitch.resize(pitch.rows());
  for (std::size_t t = 0; t < pitch.rows(); ++t) seq.note_pitch[t] = std::clamp(pitch(t, 0), 0.0, 1.0);
  return seq;
}

}  // namespace csvs
