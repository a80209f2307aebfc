#include "csvs/mlpg.hpp"

#include <cmath>

#include <fmt/format.h>

#include "csvs/error.hpp"

namespace csvs {

BandedSpdMatrix::BandedSpdMatrix(std::size_t n, std::size_t bands) : n_(n), bands_(bands), data_(n * bands, 0.0) {
  if (bands < 1) throw ConfigError("banded matrix: need at least the main diagonal");
}

double BandedSpdMatrix::operator()(std::size_t r, std::size_t c) const {
  if (r < c) std::swap(r, c);
  const std::size_t k = r - c;
  return k < bands_ ? data_[k * n_ + c] : 0.0;
}

void BandedSpdMatrix::add(std::size_t r, std::size_t c, double v) {
  if (r < c) std::swap(r, c);
  const std::size_t k = r - c;
  if (k >= bands_) throw DataError(fmt::format("banded matrix: entry ({}, {}) outside {} bands", r, c, bands_));
  data_[k * n_ + c] += v;
}

Matrix BandedSpdMatrix::dense() const {
  Matrix m(n_, n_);
  for (std::size_t r = 0; r < n_; ++r)
    for (std::size_t c = 0; c < n_; ++c) m(r, c) = (*this)(r, c);
  return m;
}

std::vector<double> banded_spd_solve(const BandedSpdMatrix& a, std::span<const double> rhs) {
  const std::size_t n = a.size(), b = a.bands();
  if (rhs.size() != n) throw DataError(fmt::format("banded solve: rhs of length {} for order {}", rhs.size(), n));

  // L stored like the input: l[k][i] = L(i + k, i).
  std::vector<std::vector<double>> l(b, std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 1; k < b && k <= j; ++k) d -= l[k][j - k] * l[k][j - k];
    if (!(d > 0.0)) throw NumericalError(fmt::format("banded solve: non-positive pivot {} at row {}", d, j));
    const double ljj = std::sqrt(d);
    l[0][j] = ljj;
    for (std::size_t k = 1; k < b && j + k < n; ++k) {
      const std::size_t i = j + k;
      double s = a(i, j);
      // sum over m < j of L(i, m) L(j, m), both within the band.
      for (std::size_t q = 1; q + k < b && q <= j; ++q) s -= l[q + k][j - q] * l[q][j - q];
      l[k][j] = s / ljj;
    }
  }

  std::vector<double> x(rhs.begin(), rhs.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 1; k < b && k <= i; ++k) x[i] -= l[k][i - k] * x[i - k];
    x[i] /= l[0][i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = 1; k < b && i + k < n; ++k) x[i] -= l[k][i] * x[i + k];
    x[i] /= l[0][i];
  }
  return x;
}

namespace {

void check_problem(const GenerationProblem& p, std::size_t windows) {
  if (p.means.rows() != p.variances.rows() || p.means.cols() != p.variances.cols())
    throw DataError("mlpg: means and variances differ in shape");
  if (p.means.cols() % windows != 0)
    throw DataError(fmt::format("mlpg: {} columns is not a multiple of {} windows", p.means.cols(), windows));
  for (double v : p.variances.values())
    if (!(v > 0.0)) throw DataError("mlpg: variances must be strictly positive");
}

}  // namespace

NormalEquations build_normal_equations(const GenerationProblem& p, const WindowMatrix& W, std::size_t d) {
  const std::size_t T = W.frames(), D = p.means.cols() / W.windows();
  NormalEquations eq{BandedSpdMatrix(T, 2 * W.bandwidth() + 1), std::vector<double>(T, 0.0)};
  for (std::size_t w = 0; w < W.windows(); ++w) {
    const std::size_t k = w * D + d;
    for (std::size_t t = 0; t < T; ++t) {
      const double prec = 1.0 / p.variances(t, k);
      const auto& taps = W.row(w, t);
      for (const auto& [ci, a] : taps) {
        eq.rhs[ci] += a * prec * p.means(t, k);
        for (const auto& [cj, b] : taps)
          if (cj <= ci) eq.lhs.add(ci, cj, a * prec * b);
      }
    }
  }
  return eq;
}

Matrix mlpg_generate(const GenerationProblem& p) {
  p.windows.validate();
  check_problem(p, p.windows.size());
  const std::size_t T = p.means.rows(), D = p.means.cols() / p.windows.size();
  if (T == 0) return Matrix(0, D);
  const WindowMatrix W(T, p.windows);
  Matrix c(T, D);
  for (std::size_t d = 0; d < D; ++d) {
    const NormalEquations eq = build_normal_equations(p, W, d);
    const std::vector<double> x = banded_spd_solve(eq.lhs, eq.rhs);
    for (std::size_t t = 0; t < T; ++t) c(t, d) = x[t];
  }
  return c;
}

}  // namespace csvs
