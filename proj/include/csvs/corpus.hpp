#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "csvs/acoustic_model.hpp"
#include "csvs/matrix.hpp"
#include "csvs/score.hpp"

namespace csvs {

enum class CorpusOrigin { synthetic, imported };

struct CorpusItem {
  std::string name;
  Score score;
  Matrix features;  // T x layout.dim(), denormalized

  bool operator==(const CorpusItem&) const = default;
};

struct Corpus {
  std::vector<CorpusItem> items;
  AcousticLayout layout;
  std::vector<std::string> phone_inventory;
  CorpusOrigin origin = CorpusOrigin::synthetic;

  // Throws DataError when an item's frame counts disagree or a score is
  // invalid.
  void validate() const;
  bool operator==(const Corpus&) const = default;
};

// Synthetic corpus rule.
//
// Inventory: vowels a i u e o, consonants k s t n m ("sil" marks rests).
// k, s and t are unvoiced.
//
// Scores, per song, from mt19937_64(seed) in song order: the first event is a
// note; after a note a rest of 20..60 frames follows with probability 0.15.
// Notes last 40..160 frames, the first pitch is 60..72 and later pitches step
// by -4..4 clamped to [60, 72]. A note opens with a 5..15 frame consonant with
// probability 0.6 (dropped if the note is not longer than it); a vowel fills
// the rest. The last event is cut at frames_per_song.
//
// Features, with p(t) the phone index (inventory order, sil = 10):
//   mgc   raw(t, 0) = -3 + 0.4 sin(1.3 (p + 1)), sil -6
//         raw(t, k) = 0.8 sin(0.7 (p + 1) k + 0.3 p) / k, sil 0
//         plus 0.02 (midi - 66) on coefficient 1 of note frames; then
//         smoothed per coefficient by a normalized Gaussian (sigma 4,
//         radius 10, edge frames repeated)
//   lf0   on voiced frames with u frames into a note and d = (midi - previous
//         midi) ln2 / 12 (0 for the first note):
//         d (-exp(-u / 6) + 0.25 (u / 10) exp(1 - u / 10));
//         unvoiced frames are filled by linear interpolation
//   ap    -2 - 20 v(t) (1 - b / n_ap) with v the smoothed voicing indicator
//   vib   notes longer than 100 frames carry a section [s + 40, e - 5);
//         with u frames into a section of length L:
//         m_a = 80 sin(pi (u + 0.5) / L) cents, m_f = 5.5 + 0.3 u / L Hz;
//         frames outside sections are interpolated (0 cents and 5.5 Hz when a
//         song has none)
//   flags F0 flag = voicing, vibrato flag = in a section
Corpus make_synthetic_corpus(std::uint64_t seed, std::size_t n_songs, std::size_t frames_per_song,
                             AcousticLayout layout = {});

std::vector<std::string> synthetic_phone_inventory();

// Linear interpolation over frames where valid[t] is false; edges hold the
// nearest valid value. All-invalid tracks are filled with `fallback`.
std::vector<double> fill_by_interpolation(std::span<const double> values, const std::vector<bool>& valid,
                                          double fallback);

// Normalized Gaussian smoothing with edge repetition.
std::vector<double> gaussian_smooth(std::span<const double> x, double sigma, std::size_t radius);

// Feature matrix file: int64 T, int64 D, then T*D float64, all little-endian.
void write_feature_matrix(const Matrix& m, const std::filesystem::path& path);
Matrix read_feature_matrix(const std::filesystem::path& path);

// Directory with manifest.json, one <name>.score.json and one <name>.feat per
// item.
void save_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus load_corpus(const std::filesystem::path& dir);

// "synthetic:seed,n,frames" or a corpus directory.
Corpus resolve_corpus(const std::string& spec, AcousticLayout layout = {});

}  // namespace csvs
