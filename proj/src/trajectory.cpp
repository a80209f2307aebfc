#include "csvs/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "csvs/error.hpp"

namespace csvs {

WindowSet WindowSet::standard() {
  return {{Stencil{{0, 1.0}}, Stencil{{-1, -0.5}, {1, 0.5}}, Stencil{{-1, 1.0}, {0, -2.0}, {1, 1.0}}}};
}

int WindowSet::max_offset() const {
  int m = 0;
  for (const Stencil& s : windows)
    for (const Tap& tap : s) m = std::max(m, std::abs(tap.offset));
  return m;
}

void WindowSet::validate() const {
  if (windows.empty()) throw ConfigError("windows: empty window set");
  const Stencil& id = windows.front();
  if (id.size() != 1 || id[0].offset != 0 || id[0].coefficient != 1.0)
    throw ConfigError("windows: first window must be the identity stencil");
  for (std::size_t w = 1; w < windows.size(); ++w) {
    double total = 0.0;
    for (const Tap& tap : windows[w]) total += tap.coefficient;
    if (total != 0.0) throw ConfigError(fmt::format("windows: delta window {} does not sum to zero", w));
  }
}

WindowMatrix::WindowMatrix(std::size_t frames, const WindowSet& windows) : frames_(frames) {
  if (frames < 1) throw DataError("window matrix: need at least one frame");
  windows.validate();
  const long last = static_cast<long>(frames) - 1;
  rows_.resize(windows.size());
  for (std::size_t w = 0; w < windows.size(); ++w) {
    rows_[w].resize(frames);
    for (std::size_t t = 0; t < frames; ++t) {
      auto& taps = rows_[w][t];
      for (const Tap& tap : windows.windows[w]) {
        const long col = std::clamp(static_cast<long>(t) + tap.offset, 0L, last);
        const auto c = static_cast<std::size_t>(col);
        auto it = std::find_if(taps.begin(), taps.end(), [c](const auto& e) { return e.first == c; });
        if (it == taps.end()) {
          taps.emplace_back(c, tap.coefficient);
        } else {
          it->second += tap.coefficient;
        }
        bandwidth_ = std::max(bandwidth_, static_cast<std::size_t>(std::abs(col - static_cast<long>(t))));
      }
      std::sort(taps.begin(), taps.end());
    }
  }
}

double WindowMatrix::coefficient(std::size_t w, std::size_t t, std::size_t col) const {
  for (const auto& [c, coef] : rows_[w][t])
    if (c == col) return coef;
  return 0.0;
}

void WindowMatrix::apply(std::size_t w, std::span<const double> c, std::span<double> out) const {
  for (std::size_t t = 0; t < frames_; ++t) {
    double acc = 0.0;
    for (const auto& [col, coef] : rows_[w][t]) acc += coef * c[col];
    out[t] = acc;
  }
}

void WindowMatrix::apply_transpose_add(std::size_t w, std::span<const double> y, std::span<double> out) const {
  for (std::size_t t = 0; t < frames_; ++t)
    for (const auto& [col, coef] : rows_[w][t]) out[col] += coef * y[t];
}

WindowMatrix build_window_matrix(std::size_t frames, const WindowSet& windows) {
  return WindowMatrix(frames, windows);
}

Matrix expand_trajectory(const Matrix& c, const WindowMatrix& W) {
  if (c.rows() != W.frames())
    throw DataError(fmt::format("expand_trajectory: {} frames for a {}-frame window matrix", c.rows(), W.frames()));
  const std::size_t T = c.rows(), D = c.cols();
  Matrix o(T, W.windows() * D);
  std::vector<double> track(T), out(T);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t t = 0; t < T; ++t) track[t] = c(t, d);
    for (std::size_t w = 0; w < W.windows(); ++w) {
      W.apply(w, track, out);
      for (std::size_t t = 0; t < T; ++t) o(t, w * D + d) = out[t];
    }
  }
  return o;
}

TiedCovariance TiedCovariance::unit(std::size_t dim, double floor) {
  return {std::vector<double>(dim, 1.0), floor};
}

void ResidualAccumulator::add(const Matrix& residuals) {
  if (residuals.cols() != sum_sq_.size()) throw DataError("residual accumulator: dimension mismatch");
  for (std::size_t t = 0; t < residuals.rows(); ++t)
    for (std::size_t k = 0; k < residuals.cols(); ++k) sum_sq_[k] += residuals(t, k) * residuals(t, k);
  frames_ += residuals.rows();
}

void ResidualAccumulator::merge(const ResidualAccumulator& other) {
  if (other.sum_sq_.size() != sum_sq_.size()) throw DataError("residual accumulator: dimension mismatch");
  for (std::size_t k = 0; k < sum_sq_.size(); ++k) sum_sq_[k] += other.sum_sq_[k];
  frames_ += other.frames_;
}

TiedCovariance update_tied_covariance(const ResidualAccumulator& acc, double floor) {
  if (acc.frames() == 0) throw DataError("covariance update: no accumulated residuals");
  TiedCovariance cov;
  cov.floor = floor;
  cov.variances.resize(acc.sum_sq().size());
  for (std::size_t k = 0; k < cov.variances.size(); ++k)
    cov.variances[k] = std::max(acc.sum_sq()[k] / static_cast<double>(acc.frames()), floor);
  return cov;
}

namespace {

void check_covariance(const TiedCovariance& cov, std::size_t dim) {
  if (cov.variances.size() != dim)
    throw DataError(fmt::format("trajectory loss: {} variances for {} coordinates", cov.variances.size(), dim));
  for (double v : cov.variances)
    if (!(v > 0.0)) throw NumericalError("trajectory loss: non-positive variance");
}

// Residuals o_ref - o_pred (T x W*D) and the negative log-likelihood.
std::pair<Matrix, double> residuals_and_nll(const Matrix& c_pred, const Matrix& c_ref, const TiedCovariance& cov,
                                            const WindowMatrix& W) {
  if (c_pred.rows() != c_ref.rows() || c_pred.cols() != c_ref.cols())
    throw DataError("trajectory loss: prediction and reference shapes differ");
  const Matrix o_pred = expand_trajectory(c_pred, W);
  const Matrix o_ref = expand_trajectory(c_ref, W);
  check_covariance(cov, o_pred.cols());

  std::vector<double> log_norm(cov.variances.size());
  for (std::size_t k = 0; k < log_norm.size(); ++k)
    log_norm[k] = std::log(2.0 * std::numbers::pi * cov.variances[k]);

  Matrix r(o_pred.rows(), o_pred.cols());
  double nll = 0.0;
  for (std::size_t t = 0; t < r.rows(); ++t) {
    for (std::size_t k = 0; k < r.cols(); ++k) {
      const double e = o_ref(t, k) - o_pred(t, k);
      r(t, k) = e;
      nll += 0.5 * (e * e / cov.variances[k] + log_norm[k]);
    }
  }
  return {std::move(r), nll};
}

}  // namespace

double trajectory_nll_value(const Matrix& c_pred, const Matrix& c_ref, const TiedCovariance& cov,
                            const WindowMatrix& W) {
  return residuals_and_nll(c_pred, c_ref, cov, W).second;
}

Var trajectory_nll(Var c_pred, const Matrix& c_ref, const TiedCovariance& cov, const WindowMatrix& W,
                   ResidualAccumulator* acc) {
  const Tensor& P = c_pred.value();
  if (P.rank() != 2) throw DataError("trajectory loss: prediction must be D x T");
  auto [r, nll] = residuals_and_nll(to_frames(P), c_ref, cov, W);
  if (acc != nullptr) acc->add(r);

  const std::size_t D = P.dim(0), T = P.dim(1);
  // dL/do_pred = -(o_ref - o_pred) / sigma^2, pulled back through W.
  Tensor dc({D, T});
  std::vector<double> y(T);
  for (std::size_t d = 0; d < D; ++d) {
    auto out = dc.values().subspan(d * T, T);
    for (std::size_t w = 0; w < W.windows(); ++w) {
      const std::size_t k = w * D + d;
      for (std::size_t t = 0; t < T; ++t) y[t] = -r(t, k) / cov.variances[k];
      W.apply_transpose_add(w, y, out);
    }
  }

  return c_pred.tape->push(Tensor({1}, nll), {c_pred.id}, [c_pred, dc = std::move(dc)](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    auto dst = tp.grad_slot(c_pred.id).values();
    const auto src = dc.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g * src[i];
  });
}

}  // namespace csvs
