#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "csvs/matrix.hpp"
#include "csvs/score.hpp"

namespace testing {

inline csvs::Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double lo = -1.0,
                                  double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  csvs::Matrix m(rows, cols);
  for (double& v : m.values()) v = u(rng);
  return m;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline csvs::NoteEvent note(int midi, std::size_t start, std::size_t end,
                            std::vector<csvs::PhoneSpan> phones = {}) {
  if (phones.empty()) phones.push_back({"a", start, end});
  return {csvs::EventKind::note, midi, start, end, std::move(phones)};
}

inline csvs::NoteEvent rest(std::size_t start, std::size_t end) {
  return {csvs::EventKind::rest, std::nullopt, start, end, {}};
}

inline csvs::Score make_score(std::vector<csvs::NoteEvent> events) {
  csvs::Score s;
  s.events = std::move(events);
  return s;
}

}  // namespace testing
