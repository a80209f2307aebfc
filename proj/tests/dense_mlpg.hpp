#pragma once

#include <Eigen/Dense>

#include "csvs/mlpg.hpp"
#include "oracles.hpp"

namespace oracle {

// (W' S^-1 W) c = W' S^-1 mu per static dimension, solved densely.
inline csvs::Matrix dense_mlpg(const csvs::GenerationProblem& p) {
  const std::size_t T = p.means.rows(), NW = p.windows.size(), D = p.means.cols() / NW;
  const csvs::Matrix Wd = dense_window_matrix(T, p.windows);
  Eigen::MatrixXd W(NW * T, T);
  for (std::size_t i = 0; i < NW * T; ++i)
    for (std::size_t j = 0; j < T; ++j) W(i, j) = Wd(i, j);
  csvs::Matrix c(T, D);
  for (std::size_t d = 0; d < D; ++d) {
    Eigen::VectorXd prec(NW * T), mu(NW * T);
    for (std::size_t w = 0; w < NW; ++w)
      for (std::size_t t = 0; t < T; ++t) {
        prec(w * T + t) = 1.0 / p.variances(t, w * D + d);
        mu(w * T + t) = p.means(t, w * D + d);
      }
    const Eigen::MatrixXd A = W.transpose() * prec.asDiagonal() * W;
    const Eigen::VectorXd b = W.transpose() * prec.asDiagonal() * mu;
    const Eigen::VectorXd x = A.ldlt().solve(b);
    for (std::size_t t = 0; t < T; ++t) c(t, d) = x(t);
  }
  return c;
}

}  // namespace oracle
