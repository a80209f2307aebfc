#include "csvs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>

#include "csvs/error.hpp"

namespace csvs {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  const std::size_t n =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  data_.assign(n, fill);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  const std::size_t n =
      std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  if (n != data_.size())
    throw DataError(fmt::format("tensor: {} values for a shape holding {}", data_.size(), n));
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor to_channels(const Matrix& frames) {
  Tensor t({frames.cols(), frames.rows()});
  for (std::size_t r = 0; r < frames.rows(); ++r)
    for (std::size_t c = 0; c < frames.cols(); ++c) t.at(c, r) = frames(r, c);
  return t;
}

Matrix to_frames(const Tensor& channels) {
  Matrix m(channels.dim(1), channels.dim(0));
  for (std::size_t c = 0; c < channels.dim(0); ++c)
    for (std::size_t t = 0; t < channels.dim(1); ++t) m(t, c) = channels.at(c, t);
  return m;
}

Parameter& ParamStore::add(const std::string& name, Tensor init) {
  if (params_.contains(name)) throw ConfigError(fmt::format("duplicate parameter \"{}\"", name));
  Tensor grad(init.shape());
  auto [it, ok] = params_.emplace(name, Parameter{std::move(init), std::move(grad)});
  return it->second;
}

Parameter& ParamStore::get(std::string_view name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError(fmt::format("unknown parameter \"{}\"", name));
  return it->second;
}

const Parameter& ParamStore::get(std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw DataError(fmt::format("unknown parameter \"{}\"", name));
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return params_.find(name) != params_.end(); }

void ParamStore::zero_grad() {
  for (auto& [name, p] : params_) p.grad.fill(0.0);
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.value.size();
  return n;
}

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, false});
  return {this, nodes_.size() - 1};
}

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, {}, nullptr, true});
  return {this, nodes_.size() - 1};
}

Var Tape::param(Parameter& param) {
  nodes_.push_back(Node{param.value, {}, {}, {}, &param, true});
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward) {
  bool needs = false;
  for (std::size_t p : parents) needs = needs || nodes_[p].requires_grad;
  nodes_.push_back(Node{std::move(value), {}, std::move(parents), needs ? std::move(backward) : nullptr,
                        nullptr, needs});
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad_slot(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ConfigError("backward: variable belongs to another tape");
  if (nodes_[loss.id].value.size() != 1) throw ConfigError("backward: loss must be a scalar");
  for (Node& n : nodes_) n.grad = Tensor{};
  grad_slot(loss.id).fill(1.0);

  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0 || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto dst = n.param->grad.values();
      auto src = nodes_[id].grad.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

namespace {

void require(bool ok, const char* op, const std::string& what) {
  if (!ok) throw DataError(fmt::format("{}: {}", op, what));
}

// Output frames t in [lo, hi) whose input index t * stride + offset lies in
// [0, in_frames).
std::pair<std::size_t, std::size_t> tap_range(long offset, std::size_t stride, std::size_t in_frames,
                                               std::size_t out_frames) {
  const long s = static_cast<long>(stride);
  const long lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
  const long last = static_cast<long>(in_frames) - 1 - offset;
  if (last < 0) return {0, 0};
  const long hi = std::min(static_cast<long>(out_frames), last / s + 1);
  if (hi <= lo) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

}  // namespace

Var conv1d(Var x, Var w, Var b, std::size_t stride, Padding padding) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  const Tensor& B = b.value();
  require(X.rank() == 2 && Wt.rank() == 3 && B.rank() == 1, "conv1d", "expected ranks 2/3/1");
  const std::size_t cin = X.dim(0), T = X.dim(1), cout = Wt.dim(0), K = Wt.dim(2);
  require(Wt.dim(1) == cin, "conv1d", fmt::format("kernel expects {} input channels, got {}", Wt.dim(1), cin));
  require(B.dim(0) == cout, "conv1d", "bias length differs from output channels");
  require(stride >= 1 && K >= 1 && T >= 1, "conv1d", "stride, width and frame count must be positive");

  long pad_left = 0;
  std::size_t tout = 0;
  if (padding == Padding::same) {
    require(stride == 1 || T % stride == 0, "conv1d",
            fmt::format("same padding needs {} frames divisible by stride {}", T, stride));
    pad_left = static_cast<long>((K - 1) / 2);
    tout = (T + stride - 1) / stride;
  } else {
    require(T >= K, "conv1d", "valid padding needs at least K frames");
    tout = (T - K) / stride + 1;
  }

  Tensor Y({cout, tout});
  for (std::size_t co = 0; co < cout; ++co) {
    double* y = &Y.at(co, 0);
    std::fill(y, y + tout, B[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* xr = &X.at(ci, 0);
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = Wt.at(co, ci, k);
        const long off = static_cast<long>(k) - pad_left;
        const auto [lo, hi] = tap_range(off, stride, T, tout);
        if (stride == 1) {
          const double* xs = xr + off;
          for (std::size_t t = lo; t < hi; ++t) y[t] += wv * xs[t];
        } else {
          for (std::size_t t = lo; t < hi; ++t) y[t] += wv * xr[static_cast<long>(t * stride) + off];
        }
      }
    }
  }

  return tape.push(std::move(Y), {x.id, w.id, b.id},
                   [=](Tape& tp, std::size_t self) {
                     const Tensor& G = tp.grad(self);
                     const Tensor& Xv = tp.value(x.id);
                     const Tensor& Wv = tp.value(w.id);
                     if (tp.requires_grad(x.id)) {
                       Tensor& gx = tp.grad_slot(x.id);
                       for (std::size_t co = 0; co < cout; ++co)
                         for (std::size_t ci = 0; ci < cin; ++ci)
                           for (std::size_t k = 0; k < K; ++k) {
                             const double wv = Wv.at(co, ci, k);
                             const long off = static_cast<long>(k) - pad_left;
                             const auto [lo, hi] = tap_range(off, stride, T, tout);
                             const double* g = &G.at(co, 0);
                             double* dx = &gx.at(ci, 0);
                             for (std::size_t t = lo; t < hi; ++t) dx[static_cast<long>(t * stride) + off] += wv * g[t];
                           }
                     }
                     if (tp.requires_grad(w.id)) {
                       Tensor& gw = tp.grad_slot(w.id);
                       for (std::size_t co = 0; co < cout; ++co)
                         for (std::size_t ci = 0; ci < cin; ++ci)
                           for (std::size_t k = 0; k < K; ++k) {
                             const long off = static_cast<long>(k) - pad_left;
                             const auto [lo, hi] = tap_range(off, stride, T, tout);
                             const double* g = &G.at(co, 0);
                             const double* xr = &Xv.at(ci, 0);
                             double acc = 0.0;
                             for (std::size_t t = lo; t < hi; ++t) acc += g[t] * xr[static_cast<long>(t * stride) + off];
                             gw.at(co, ci, k) += acc;
                           }
                     }
                     if (tp.requires_grad(b.id)) {
                       Tensor& gb = tp.grad_slot(b.id);
                       for (std::size_t co = 0; co < cout; ++co) {
                         const double* g = &G.at(co, 0);
                         gb[co] += std::accumulate(g, g + tout, 0.0);
                       }
                     }
                   });
}

Var conv1d_transpose(Var x, Var w, Var b, std::size_t stride) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  const Tensor& B = b.value();
  require(X.rank() == 2 && Wt.rank() == 3 && B.rank() == 1, "conv1d_transpose", "expected ranks 2/3/1");
  const std::size_t cin = X.dim(0), T = X.dim(1), cout = Wt.dim(1), K = Wt.dim(2);
  require(Wt.dim(0) == cin, "conv1d_transpose",
          fmt::format("kernel expects {} input channels, got {}", Wt.dim(0), cin));
  require(B.dim(0) == cout, "conv1d_transpose", "bias length differs from output channels");
  require(stride >= 1 && K >= 1 && T >= 1, "conv1d_transpose", "stride, width and frame count must be positive");

  const long pad_left = static_cast<long>((K - 1) / 2);
  const std::size_t tout = T * stride;

  Tensor Y({cout, tout});
  for (std::size_t co = 0; co < cout; ++co) std::fill(&Y.at(co, 0), &Y.at(co, 0) + tout, B[co]);
  for (std::size_t ci = 0; ci < cin; ++ci) {
    const double* xr = &X.at(ci, 0);
    for (std::size_t co = 0; co < cout; ++co) {
      double* y = &Y.at(co, 0);
      for (std::size_t k = 0; k < K; ++k) {
        const double wv = Wt.at(ci, co, k);
        const long off = static_cast<long>(k) - pad_left;
        const auto [lo, hi] = tap_range(off, stride, tout, T);
        for (std::size_t t = lo; t < hi; ++t) y[static_cast<long>(t * stride) + off] += wv * xr[t];
      }
    }
  }

  return tape.push(std::move(Y), {x.id, w.id, b.id},
                   [=](Tape& tp, std::size_t self) {
                     const Tensor& G = tp.grad(self);
                     const Tensor& Xv = tp.value(x.id);
                     const Tensor& Wv = tp.value(w.id);
                     Tensor* gx = tp.requires_grad(x.id) ? &tp.grad_slot(x.id) : nullptr;
                     Tensor* gw = tp.requires_grad(w.id) ? &tp.grad_slot(w.id) : nullptr;
                     for (std::size_t ci = 0; ci < cin; ++ci)
                       for (std::size_t co = 0; co < cout; ++co)
                         for (std::size_t k = 0; k < K; ++k) {
                           const long off = static_cast<long>(k) - pad_left;
                           const auto [lo, hi] = tap_range(off, stride, tout, T);
                           const double* g = &G.at(co, 0);
                           if (gx != nullptr) {
                             const double wv = Wv.at(ci, co, k);
                             double* dx = &gx->at(ci, 0);
                             for (std::size_t t = lo; t < hi; ++t) dx[t] += wv * g[static_cast<long>(t * stride) + off];
                           }
                           if (gw != nullptr) {
                             const double* xr = &Xv.at(ci, 0);
                             double acc = 0.0;
                             for (std::size_t t = lo; t < hi; ++t) acc += xr[t] * g[static_cast<long>(t * stride) + off];
                             gw->at(ci, co, k) += acc;
                           }
                         }
                     if (tp.requires_grad(b.id)) {
                       Tensor& gb = tp.grad_slot(b.id);
                       for (std::size_t co = 0; co < cout; ++co) {
                         const double* g = &G.at(co, 0);
                         gb[co] += std::accumulate(g, g + tout, 0.0);
                       }
                     }
                   });
}

Var relu(Var x) {
  Tensor Y = x.value();
  for (double& v : Y.values()) v = v > 0.0 ? v : 0.0;
  return x.tape->push(std::move(Y), {x.id}, [=](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).values();
    const auto xv = tp.value(x.id).values();
    auto dx = tp.grad_slot(x.id).values();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > 0.0) dx[i] += g[i];
  });
}

Var sigmoid(Var x) {
  Tensor Y = x.value();
  for (double& v : Y.values()) v = 1.0 / (1.0 + std::exp(-v));
  return x.tape->push(std::move(Y), {x.id}, [=](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).values();
    const auto y = tp.value(self).values();
    auto dx = tp.grad_slot(x.id).values();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var dropout(Var x, double p, bool training, std::mt19937_64& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError(fmt::format("dropout probability {} outside [0, 1)", p));
  if (!training || p == 0.0) return x;

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.value().size());
  for (double& m : mask) m = unif(rng) < p ? 0.0 : keep_scale;

  Tensor Y = x.value();
  auto y = Y.values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= mask[i];
  return x.tape->push(std::move(Y), {x.id}, [x, mask = std::move(mask)](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).values();
    auto dx = tp.grad_slot(x.id).values();
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
  });
}

Var add(Var a, Var b) {
  require(a.value().shape() == b.value().shape(), "add", "shape mismatch");
  Tensor Y = a.value();
  auto y = Y.values();
  const auto bv = b.value().values();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.tape->push(std::move(Y), {a.id, b.id}, [=](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).values();
    for (std::size_t id : {a.id, b.id}) {
      if (!tp.requires_grad(id)) continue;
      auto d = tp.grad_slot(id).values();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var concat_channels(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require(A.rank() == 2 && B.rank() == 2, "concat_channels", "expected rank-2 tensors");
  require(A.dim(1) == B.dim(1), "concat_channels",
          fmt::format("frame counts differ ({} vs {})", A.dim(1), B.dim(1)));
  const std::size_t na = A.size();
  std::vector<double> v(A.values().begin(), A.values().end());
  v.insert(v.end(), B.values().begin(), B.values().end());
  Tensor Y({A.dim(0) + B.dim(0), A.dim(1)}, std::move(v));
  return a.tape->push(std::move(Y), {a.id, b.id}, [=](Tape& tp, std::size_t self) {
    const auto g = tp.grad(self).values();
    if (tp.requires_grad(a.id)) {
      auto d = tp.grad_slot(a.id).values();
      for (std::size_t i = 0; i < na; ++i) d[i] += g[i];
    }
    if (tp.requires_grad(b.id)) {
      auto d = tp.grad_slot(b.id).values();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[na + i];
    }
  });
}

Var resize_frames(Var x, std::size_t frames) {
  const Tensor& X = x.value();
  require(X.rank() == 2, "resize_frames", "expected a rank-2 tensor");
  const std::size_t C = X.dim(0), T = X.dim(1), keep = std::min(T, frames);
  if (frames == T) return x;
  Tensor Y({C, frames});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t t = 0; t < keep; ++t) Y.at(c, t) = X.at(c, t);
  return x.tape->push(std::move(Y), {x.id}, [=](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad(self);
    Tensor& gx = tp.grad_slot(x.id);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t t = 0; t < keep; ++t) gx.at(c, t) += G.at(c, t);
  });
}

Var sum(Var x) {
  const auto v = x.value().values();
  Tensor Y({1}, std::accumulate(v.begin(), v.end(), 0.0));
  return x.tape->push(std::move(Y), {x.id}, [=](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    for (double& d : tp.grad_slot(x.id).values()) d += g;
  });
}

Var squared_error(Var x, const Tensor& target) {
  require(x.value().shape() == target.shape(), "squared_error", "shape mismatch");
  const auto xv = x.value().values();
  const auto tv = target.values();
  std::vector<double> diff(xv.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    diff[i] = xv[i] - tv[i];
    acc += diff[i] * diff[i];
  }
  return x.tape->push(Tensor({1}, acc), {x.id}, [x, diff = std::move(diff)](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    auto d = tp.grad_slot(x.id).values();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += 2.0 * g * diff[i];
  });
}

void Adam::step(ParamStore& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    Moments& mom = moments_[name];
    if (mom.m.size() != p.value.size()) {
      mom.m.assign(p.value.size(), 0.0);
      mom.v.assign(p.value.size(), 0.0);
    }
    auto w = p.value.values();
    const auto g = p.grad.values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
      mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      w[i] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

void Adam::reset() {
  t_ = 0;
  moments_.clear();
}

Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> unif(-limit, limit);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = unif(rng);
  return t;
}

}  // namespace csvs
