#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "csvs/matrix.hpp"
#include "csvs/trajectory.hpp"

namespace csvs {

// Symmetric positive-definite band matrix stored by lower diagonals:
// band(k, i) = A(i + k, i) for k in [0, bands).
class BandedSpdMatrix {
 public:
  BandedSpdMatrix(std::size_t n, std::size_t bands);

  std::size_t size() const { return n_; }
  // Number of stored diagonals including the main one.
  std::size_t bands() const { return bands_; }

  // Symmetric access; entries outside the band read as zero.
  double operator()(std::size_t r, std::size_t c) const;
  // Adds v at (r, c) and, implicitly, (c, r). Throws outside the band.
  void add(std::size_t r, std::size_t c, double v);

  Matrix dense() const;

 private:
  std::size_t n_;
  std::size_t bands_;
  std::vector<double> data_;  // bands_ x n_
};

// Banded Cholesky solve. Throws NumericalError on a non-positive pivot.
std::vector<double> banded_spd_solve(const BandedSpdMatrix& a, std::span<const double> rhs);

struct GenerationProblem {
  Matrix means;      // T x (W*D), same layout as expand_trajectory
  Matrix variances;  // T x (W*D), strictly positive
  WindowSet windows = WindowSet::standard();
};

// W' S^-1 W and W' S^-1 mu for static dimension d.
struct NormalEquations {
  BandedSpdMatrix lhs;
  std::vector<double> rhs;
};
NormalEquations build_normal_equations(const GenerationProblem& p, const WindowMatrix& W, std::size_t d);

// Per-dimension maximum-likelihood static trajectory, T x D.
Matrix mlpg_generate(const GenerationProblem& p);

}  // namespace csvs
