#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "csvs/matrix.hpp"
#include "csvs/tensor.hpp"

namespace csvs {

struct Tap {
  int offset = 0;
  double coefficient = 0.0;
};

using Stencil = std::vector<Tap>;

// Delta windows. Index 0 is the static (identity) window. Frames outside the
// sequence take the value of the nearest edge frame.
struct WindowSet {
  std::vector<Stencil> windows;

  // {(0, 1)}, {(-1, -0.5), (+1, +0.5)}, {(-1, 1), (0, -2), (+1, 1)}.
  static WindowSet standard();

  std::size_t size() const { return windows.size(); }
  int max_offset() const;
  // Throws ConfigError if window 0 is not the identity or a delta stencil
  // does not sum to zero.
  void validate() const;
};

// Banded operator mapping a static track c (T) to the stacked parameter track
// o (T per window). Row t of window w holds its taps sorted by frame, with
// frame indices clamped to [0, T) and taps that land on the same frame
// combined.
class WindowMatrix {
 public:
  WindowMatrix(std::size_t frames, const WindowSet& windows);

  std::size_t frames() const { return frames_; }
  std::size_t windows() const { return rows_.size(); }
  // Largest |row - column| over all stored taps.
  std::size_t bandwidth() const { return bandwidth_; }

  // Taps (column, coefficient) of row t in window w.
  const std::vector<std::pair<std::size_t, double>>& row(std::size_t w, std::size_t t) const {
    return rows_[w][t];
  }
  // Entry W_w(t, col).
  double coefficient(std::size_t w, std::size_t t, std::size_t col) const;

  // out[t] = sum over taps of coefficient * c[col].
  void apply(std::size_t w, std::span<const double> c, std::span<double> out) const;
  // out[col] += coefficient * y[t] over all taps (accumulates).
  void apply_transpose_add(std::size_t w, std::span<const double> y, std::span<double> out) const;

 private:
  std::size_t frames_;
  std::size_t bandwidth_ = 0;
  std::vector<std::vector<std::vector<std::pair<std::size_t, double>>>> rows_;
};

// Errors on T < 1.
WindowMatrix build_window_matrix(std::size_t frames, const WindowSet& windows);

// c: T x D -> o: T x (W*D) with o_t = [c_t, delta1 c_t, delta2 c_t, ...].
Matrix expand_trajectory(const Matrix& c, const WindowMatrix& W);

// One variance per coordinate of o_t, shared by every frame.
struct TiedCovariance {
  std::vector<double> variances;
  double floor = 1e-6;

  static TiedCovariance unit(std::size_t dim, double floor = 1e-6);
  bool operator==(const TiedCovariance&) const = default;
};

// Running sum of squared residuals (o_ref - o_pred) per coordinate.
class ResidualAccumulator {
 public:
  explicit ResidualAccumulator(std::size_t dim = 0) : sum_sq_(dim, 0.0) {}

  void add(const Matrix& residuals);
  void merge(const ResidualAccumulator& other);
  std::size_t frames() const { return frames_; }
  const std::vector<double>& sum_sq() const { return sum_sq_; }

 private:
  std::vector<double> sum_sq_;
  std::size_t frames_ = 0;
};

// Closed-form maximizer: mean squared residual per coordinate, clamped at the
// floor. Throws DataError when nothing was accumulated.
TiedCovariance update_tied_covariance(const ResidualAccumulator& acc, double floor = 1e-6);

// -log N(W c_ref ; W c_pred, Sigma) for T x D matrices.
double trajectory_nll_value(const Matrix& c_pred, const Matrix& c_ref, const TiedCovariance& cov,
                            const WindowMatrix& W);

// Differentiable form. c_pred is a D x T tape variable; gradients flow to it
// only. When `acc` is given the residuals of this evaluation are added to it.
Var trajectory_nll(Var c_pred, const Matrix& c_ref, const TiedCovariance& cov, const WindowMatrix& W,
                   ResidualAccumulator* acc = nullptr);

}  // namespace csvs
