#pragma once

// Minimal dense tensors with tape-based reverse-mode differentiation.
//
// Activations are laid out channels x frames, row-major. Convolution kernels
// are out_channels x in_channels x width. Everything is 64-bit.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "csvs/matrix.hpp"

namespace csvs {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-2 access (channel, frame).
  double& at(std::size_t c, std::size_t t) { return data_[c * shape_[1] + t]; }
  const double& at(std::size_t c, std::size_t t) const { return data_[c * shape_[1] + t]; }
  // Rank-3 access (out, in, tap).
  double& at(std::size_t o, std::size_t i, std::size_t k) { return data_[(o * shape_[1] + i) * shape_[2] + k]; }
  const double& at(std::size_t o, std::size_t i, std::size_t k) const {
    return data_[(o * shape_[1] + i) * shape_[2] + k];
  }

  void fill(double v);
  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// T x D frame matrix <-> D x T channel tensor.
Tensor to_channels(const Matrix& frames);
Matrix to_frames(const Tensor& channels);

struct Parameter {
  Tensor value;
  Tensor grad;
};

// Named trainable tensors in canonical (sorted) name order.
class ParamStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  void zero_grad();
  std::size_t parameter_count() const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  std::size_t size() const { return params_.size(); }

  bool training = false;

 private:
  std::map<std::string, Parameter, std::less<>> params_;
};

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
};

class Tape {
 public:
  // Accumulates the node's gradient into its parents' gradients.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is kept on the tape (read it with grad()).
  Var variable(Tensor value);
  // Leaf bound to a parameter; backward() adds into param.grad.
  Var param(Parameter& param);

  Var push(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }
  // Gradient slot, allocated (zeroed) on first access.
  Tensor& grad_slot(std::size_t id);

  // Reverse sweep from a scalar node. Tape gradients are recomputed on each
  // call; parameter gradients accumulate until ParamStore::zero_grad().
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

enum class Padding { same, valid };

// Cross-correlation along frames. x: Cin x T, w: Cout x Cin x K, b: Cout.
// Same padding puts (K-1)/2 zeros on the left and the rest on the right and
// yields ceil(T / stride) frames; it requires stride 1 or T % stride == 0.
Var conv1d(Var x, Var w, Var b, std::size_t stride, Padding padding);

// Adjoint of the same-padded strided conv1d. x: Cin x T, w: Cin x Cout x K,
// b: Cout; output Cout x (T * stride).
Var conv1d_transpose(Var x, Var w, Var b, std::size_t stride);

Var relu(Var x);
Var sigmoid(Var x);
// Inverted dropout; identity when !training or p == 0.
Var dropout(Var x, double p, bool training, std::mt19937_64& rng);
Var add(Var a, Var b);
// Stacks rank-2 tensors along channels; frame counts must agree.
Var concat_channels(Var a, Var b);
// Zero-pads (or crops) the frame axis on the right to `frames`.
Var resize_frames(Var x, std::size_t frames);
Var sum(Var x);
// Sum of squared differences against a constant target of equal shape.
Var squared_error(Var x, const Tensor& target);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamStore& params);
  std::size_t steps() const { return t_; }
  // Forgets the moment estimates and the step count.
  void reset();
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments, std::less<>> moments_;
};

// Uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(std::vector<std::size_t> shape, std::size_t fan_in, std::size_t fan_out,
                      std::mt19937_64& rng);

}  // namespace csvs
