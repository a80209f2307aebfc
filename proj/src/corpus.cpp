#include "csvs/corpus.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "csvs/error.hpp"

namespace csvs {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

using nlohmann::json;

constexpr std::size_t kSilence = 10;
constexpr double kSmoothSigma = 4.0;
constexpr std::size_t kSmoothRadius = 10;

bool unvoiced_phone(const std::string& s) { return s == "k" || s == "s" || s == "t"; }

Score random_score(std::mt19937_64& rng, std::size_t frames) {
  const std::vector<std::string> vowels{"a", "i", "u", "e", "o"};
  const std::vector<std::string> consonants{"k", "s", "t", "n", "m"};
  auto uniform = [&rng](long lo, long hi) { return std::uniform_int_distribution<long>(lo, hi)(rng); };
  auto chance = [&rng](double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; };

  Score score;
  std::size_t t = 0;
  int pitch = static_cast<int>(uniform(60, 72));
  bool after_note = false;
  while (t < frames) {
    NoteEvent ev;
    ev.start_frame = t;
    if (after_note && chance(0.15)) {
      ev.kind = EventKind::rest;
      ev.end_frame = std::min(frames, t + static_cast<std::size_t>(uniform(20, 60)));
      after_note = false;
    } else {
      if (after_note) pitch = std::clamp(pitch + static_cast<int>(uniform(-4, 4)), 60, 72);
      ev.kind = EventKind::note;
      ev.midi_pitch = pitch;
      ev.end_frame = std::min(frames, t + static_cast<std::size_t>(uniform(40, 160)));
      std::size_t cursor = t;
      if (chance(0.6)) {
        const auto len = static_cast<std::size_t>(uniform(5, 15));
        const std::string& c = consonants[static_cast<std::size_t>(uniform(0, 4))];
        if (ev.length() > len) {
          ev.phones.push_back({c, t, t + len});
          cursor = t + len;
        }
      }
      ev.phones.push_back({vowels[static_cast<std::size_t>(uniform(0, 4))], cursor, ev.end_frame});
      after_note = true;
    }
    t = ev.end_frame;
    score.events.push_back(std::move(ev));
  }
  return score;
}

Matrix synthetic_features(const Score& score, const AcousticLayout& layout,
                          const std::vector<std::string>& inventory) {
  const std::size_t T = score.frame_count();
  Matrix f(T, layout.dim());

  std::vector<std::size_t> phone(T, kSilence);
  std::vector<int> midi(T, -1);
  std::vector<bool> voiced(T, false);
  std::vector<double> lf0(T, 0.0);
  int previous = -1;
  for (const NoteEvent& ev : score.events) {
    if (ev.is_rest()) continue;
    const int m = *ev.midi_pitch;
    const double d = previous < 0 ? 0.0 : (m - previous) * std::numbers::ln2 / 12.0;
    previous = m;
    for (const PhoneSpan& ph : ev.phones) {
      const auto idx = static_cast<std::size_t>(
          std::find(inventory.begin(), inventory.end(), ph.symbol) - inventory.begin());
      for (std::size_t t = ph.start_frame; t < ph.end_frame; ++t) {
        phone[t] = idx;
        midi[t] = m;
        voiced[t] = !unvoiced_phone(ph.symbol);
        const double u = static_cast<double>(t - ev.start_frame);
        lf0[t] = d * (-std::exp(-u / 6.0) + 0.25 * (u / 10.0) * std::exp(1.0 - u / 10.0));
      }
    }
  }

  std::vector<double> raw(T);
  for (std::size_t k = 0; k < layout.mgc; ++k) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t p = phone[t];
      const double pd = static_cast<double>(p), kd = static_cast<double>(k);
      double v;
      if (k == 0)
        v = p == kSilence ? -6.0 : -3.0 + 0.4 * std::sin(1.3 * (pd + 1.0));
      else
        v = p == kSilence ? 0.0 : 0.8 * std::sin(0.7 * (pd + 1.0) * kd + 0.3 * pd) / kd;
      if (k == 1 && midi[t] >= 0) v += 0.02 * (midi[t] - 66);
      raw[t] = v;
    }
    const std::vector<double> s = gaussian_smooth(raw, kSmoothSigma, kSmoothRadius);
    for (std::size_t t = 0; t < T; ++t) f(t, k) = s[t];
  }

  const std::vector<double> lf0_filled = fill_by_interpolation(lf0, voiced, 0.0);
  std::vector<double> v_ind(T);
  for (std::size_t t = 0; t < T; ++t) v_ind[t] = voiced[t] ? 1.0 : 0.0;
  const std::vector<double> v_smooth = gaussian_smooth(v_ind, kSmoothSigma, kSmoothRadius);
  for (std::size_t t = 0; t < T; ++t) {
    f(t, layout.lf0()) = lf0_filled[t];
    for (std::size_t b = 0; b < layout.ap; ++b)
      f(t, layout.ap_begin() + b) =
          -2.0 - 20.0 * v_smooth[t] * (1.0 - static_cast<double>(b) / static_cast<double>(layout.ap));
    f(t, layout.f0_flag()) = v_ind[t];
  }

  std::vector<double> amp(T, 0.0), freq(T, 5.5);
  std::vector<bool> in_section(T, false);
  for (const NoteEvent& ev : score.events) {
    if (ev.is_rest() || ev.length() <= 100) continue;
    const std::size_t s = ev.start_frame + 40, e = ev.end_frame - 5;
    const double L = static_cast<double>(e - s);
    for (std::size_t t = s; t < e; ++t) {
      const double u = static_cast<double>(t - s);
      amp[t] = 80.0 * std::sin(std::numbers::pi * (u + 0.5) / L);
      freq[t] = 5.5 + 0.3 * u / L;
      in_section[t] = true;
    }
  }
  const std::vector<double> amp_filled = fill_by_interpolation(amp, in_section, 0.0);
  const std::vector<double> freq_filled = fill_by_interpolation(freq, in_section, 5.5);
  for (std::size_t t = 0; t < T; ++t) {
    f(t, layout.vib_amp()) = amp_filled[t];
    f(t, layout.vib_freq()) = freq_filled[t];
    f(t, layout.vib_flag()) = in_section[t] ? 1.0 : 0.0;
  }
  return f;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open {} for writing", path.string()));
  f << text;
  if (!f) throw DataError(fmt::format("write to {} failed", path.string()));
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open {}", path.string()));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

void Corpus::validate() const {
  if (items.empty()) throw DataError("corpus: no items");
  for (const CorpusItem& item : items) {
    validate_score(item.score);
    if (item.features.rows() != item.score.frame_count())
      throw DataError(fmt::format("corpus item {}: {} feature frames for a {}-frame score", item.name,
                                  item.features.rows(), item.score.frame_count()));
    if (item.features.cols() != layout.dim())
      throw DataError(fmt::format("corpus item {}: {} feature columns, layout needs {}", item.name,
                                  item.features.cols(), layout.dim()));
  }
}

std::vector<std::string> synthetic_phone_inventory() { return {"a", "i", "u", "e", "o", "k", "s", "t", "n", "m"}; }

std::vector<double> fill_by_interpolation(std::span<const double> values, const std::vector<bool>& valid,
                                          double fallback) {
  if (valid.size() != values.size()) throw DataError("interpolation: mask length differs from track");
  const std::size_t T = values.size();
  std::vector<double> out(values.begin(), values.end());
  std::vector<std::size_t> anchors;
  for (std::size_t t = 0; t < T; ++t)
    if (valid[t]) anchors.push_back(t);
  if (anchors.empty()) {
    std::fill(out.begin(), out.end(), fallback);
    return out;
  }
  for (std::size_t t = 0; t < anchors.front(); ++t) out[t] = values[anchors.front()];
  for (std::size_t t = anchors.back() + 1; t < T; ++t) out[t] = values[anchors.back()];
  for (std::size_t i = 0; i + 1 < anchors.size(); ++i) {
    const std::size_t a = anchors[i], b = anchors[i + 1];
    for (std::size_t t = a + 1; t < b; ++t)
      out[t] = values[a] + (values[b] - values[a]) * static_cast<double>(t - a) / static_cast<double>(b - a);
  }
  return out;
}

std::vector<double> gaussian_smooth(std::span<const double> x, double sigma, std::size_t radius) {
  const auto r = static_cast<long>(radius);
  std::vector<double> w(2 * radius + 1);
  double total = 0.0;
  for (long j = -r; j <= r; ++j) total += w[static_cast<std::size_t>(j + r)] = std::exp(-0.5 * j * j / (sigma * sigma));
  const long last = static_cast<long>(x.size()) - 1;
  std::vector<double> y(x.size(), 0.0);
  for (long t = 0; t <= last; ++t) {
    double acc = 0.0;
    for (long j = -r; j <= r; ++j) acc += w[static_cast<std::size_t>(j + r)] * x[static_cast<std::size_t>(std::clamp(t + j, 0L, last))];
    y[static_cast<std::size_t>(t)] = acc / total;
  }
  return y;
}

Corpus make_synthetic_corpus(std::uint64_t seed, std::size_t n_songs, std::size_t frames_per_song,
                             AcousticLayout layout) {
  if (n_songs < 1) throw ConfigError("synthetic corpus: need at least one song");
  if (frames_per_song < 1) throw ConfigError("synthetic corpus: songs need at least one frame");
  Corpus corpus;
  corpus.layout = layout;
  corpus.phone_inventory = synthetic_phone_inventory();
  corpus.origin = CorpusOrigin::synthetic;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n_songs; ++i) {
    CorpusItem item;
    item.name = fmt::format("song{:03}", i);
    item.score = random_score(rng, frames_per_song);
    item.features = synthetic_features(item.score, layout, corpus.phone_inventory);
    corpus.items.push_back(std::move(item));
  }
  corpus.validate();
  return corpus;
}

void write_feature_matrix(const Matrix& m, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open {} for writing", path.string()));
  const std::int64_t header[2] = {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())};
  f.write(reinterpret_cast<const char*>(header), sizeof header);
  f.write(reinterpret_cast<const char*>(m.values().data()), static_cast<std::streamsize>(m.values().size() * 8));
  if (!f) throw DataError(fmt::format("write to {} failed", path.string()));
}

Matrix read_feature_matrix(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(fmt::format("cannot open {}", path.string()));
  std::int64_t header[2];
  if (!f.read(reinterpret_cast<char*>(header), sizeof header))
    throw DataError(fmt::format("{}: truncated header", path.string()));
  if (header[0] < 0 || header[1] < 0 || (header[1] > 0 && header[0] > (std::int64_t{1} << 40) / header[1]))
    throw DataError(fmt::format("{}: implausible shape {} x {}", path.string(), header[0], header[1]));
  Matrix m(static_cast<std::size_t>(header[0]), static_cast<std::size_t>(header[1]));
  if (!f.read(reinterpret_cast<char*>(m.values().data()), static_cast<std::streamsize>(m.values().size() * 8)))
    throw DataError(fmt::format("{}: truncated data", path.string()));
  if (f.peek() != std::char_traits<char>::eof()) throw DataError(fmt::format("{}: trailing bytes", path.string()));
  for (double v : m.values())
    if (!std::isfinite(v)) throw DataError(fmt::format("{}: non-finite value", path.string()));
  return m;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  corpus.validate();
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["origin"] = corpus.origin == CorpusOrigin::synthetic ? "synthetic" : "imported";
  manifest["layout"] = {{"mgc", corpus.layout.mgc}, {"ap", corpus.layout.ap}};
  manifest["phone_inventory"] = corpus.phone_inventory;
  manifest["items"] = json::array();
  for (const CorpusItem& item : corpus.items) {
    const std::string score_file = item.name + ".score.json", feat_file = item.name + ".feat";
    write_text(dir / score_file, score_to_json(item.score));
    write_feature_matrix(item.features, dir / feat_file);
    manifest["items"].push_back({{"name", item.name}, {"score", score_file}, {"features", feat_file}});
  }
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

Corpus load_corpus(const std::filesystem::path& dir) {
  Corpus corpus;
  try {
    const json manifest = json::parse(read_text(dir / "manifest.json"));
    corpus.origin = manifest.value("origin", "imported") == "synthetic" ? CorpusOrigin::synthetic
                                                                        : CorpusOrigin::imported;
    corpus.layout.mgc = manifest.at("layout").at("mgc").get<std::size_t>();
    corpus.layout.ap = manifest.at("layout").at("ap").get<std::size_t>();
    corpus.phone_inventory = manifest.at("phone_inventory").get<std::vector<std::string>>();
    for (const json& entry : manifest.at("items")) {
      CorpusItem item;
      item.name = entry.at("name").get<std::string>();
      item.score = parse_score(read_text(dir / entry.at("score").get<std::string>()));
      item.features = read_feature_matrix(dir / entry.at("features").get<std::string>());
      corpus.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw DataError(fmt::format("{}: bad manifest: {}", dir.string(), e.what()));
  }
  corpus.validate();
  return corpus;
}

Corpus resolve_corpus(const std::string& spec, AcousticLayout layout) {
  constexpr std::string_view prefix = "synthetic:";
  if (!spec.starts_with(prefix)) return load_corpus(spec);
  unsigned long long seed = 0, n = 0, frames = 0;
  char tail = 0;
  if (std::sscanf(spec.c_str() + prefix.size(), "%llu,%llu,%llu%c", &seed, &n, &frames, &tail) != 3)
    throw ConfigError(fmt::format("corpus spec \"{}\" is not synthetic:seed,n,frames", spec));
  return make_synthetic_corpus(seed, n, frames, layout);
}

}  // namespace csvs
