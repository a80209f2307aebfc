#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "csvs/error.hpp"
#include "csvs/tensor.hpp"
#include "support.hpp"

using namespace csvs;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.values()) v = n(rng);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

Tensor run_conv(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, Padding pad) {
  Tape tape;
  return conv1d(tape.constant(x), tape.constant(w), tape.constant(b), stride, pad).value();
}

Tensor run_transpose(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
  Tape tape;
  return conv1d_transpose(tape.constant(x), tape.constant(w), tape.constant(b), stride).value();
}

// Largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over every
// parameter entry.
double gradient_check(ParamStore& params, const std::function<Var(Tape&)>& loss, double h = 1e-5) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(loss(tape));
  }
  double worst = 0.0;
  for (auto& [name, p] : params) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      Tape t1, t2;
      p.value[i] = keep + h;
      const double up = loss(t1).value()[0];
      p.value[i] = keep - h;
      const double down = loss(t2).value()[0];
      p.value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p.grad[i];
      worst = std::max(worst, std::abs(analytic - numeric) /
                                  std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("conv1d examples") {
  SUBCASE("identity 1x1") {
    std::mt19937_64 rng(1);
    const Tensor x = random_tensor({3, 5}, rng);
    Tensor w({3, 3, 1});
    for (std::size_t c = 0; c < 3; ++c) w.at(c, c, 0) = 1.0;
    CHECK(run_conv(x, w, Tensor({3}), 1, Padding::same) == x);
  }
  SUBCASE("valid cross-correlation") {
    const Tensor y = run_conv(Tensor({1, 4}, {1, 2, 3, 4}), Tensor({1, 1, 3}, {1, 1, 1}), Tensor({1}), 1,
                              Padding::valid);
    CHECK(y == Tensor({1, 2}, {6, 9}));
  }
  SUBCASE("same padding puts the odd zero on the right") {
    const Tensor y = run_conv(Tensor({1, 3}, {1, 2, 3}), Tensor({1, 1, 2}, {1, 10}), Tensor({1}), 1, Padding::same);
    CHECK(y == Tensor({1, 3}, {21, 32, 3}));
  }
  SUBCASE("strided shape") {
    std::mt19937_64 rng(2);
    const Tensor y = run_conv(random_tensor({2, 8}, rng), random_tensor({3, 2, 3}, rng), Tensor({3}), 2,
                              Padding::same);
    CHECK(y.shape() == std::vector<std::size_t>{3, 4});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(run_conv(Tensor({2, 4}), Tensor({1, 3, 1}), Tensor({1}), 1, Padding::same), DataError);
    CHECK_THROWS_AS(run_conv(Tensor({1, 5}), Tensor({1, 1, 3}), Tensor({1}), 2, Padding::same), DataError);
  }
}

TEST_CASE("1x1 conv equals a per-frame matrix multiply exactly") {
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({4, 9}, rng), w = random_tensor({5, 4, 1}, rng), b = random_tensor({5}, rng);
  const Tensor y = run_conv(x, w, b, 1, Padding::same);
  for (std::size_t o = 0; o < 5; ++o) {
    for (std::size_t t = 0; t < 9; ++t) {
      double acc = b[o];
      for (std::size_t i = 0; i < 4; ++i) acc += w.at(o, i, 0) * x.at(i, t);
      CHECK(y.at(o, t) == acc);
    }
  }
}

TEST_CASE("conv1d_transpose") {
  std::mt19937_64 rng(4);
  SUBCASE("identity") {
    const Tensor x = random_tensor({2, 6}, rng);
    Tensor w({2, 2, 1});
    w.at(0, 0, 0) = w.at(1, 1, 0) = 1.0;
    CHECK(run_transpose(x, w, Tensor({2}), 1) == x);
  }
  SUBCASE("shapes") {
    const Tensor y = run_transpose(random_tensor({3, 4}, rng), random_tensor({3, 2, 4}, rng), Tensor({2}), 2);
    CHECK(y.shape() == std::vector<std::size_t>{2, 8});
    Tape tape;
    Var down = conv1d(tape.constant(random_tensor({3, 8}, rng)), tape.constant(random_tensor({5, 3, 3}, rng)),
                      tape.constant(Tensor({5})), 2, Padding::same);
    Var up = conv1d_transpose(down, tape.constant(random_tensor({5, 3, 4}, rng)), tape.constant(Tensor({3})), 2);
    CHECK(up.value().shape() == std::vector<std::size_t>{3, 8});
  }
  SUBCASE("adjoint of the strided conv") {
    for (std::size_t K : {1, 2, 3, 4, 5}) {
      for (std::size_t stride : {1, 2}) {
        const Tensor x = random_tensor({3, 12}, rng), w = random_tensor({4, 3, K}, rng);
        const Tensor y = random_tensor({4, 12 / stride}, rng);
        const double lhs = dot(run_conv(x, w, Tensor({4}), stride, Padding::same), y);
        const double rhs = dot(x, run_transpose(y, w, Tensor({3}), stride));
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("activations") {
  Tape tape;
  CHECK(relu(tape.constant(Tensor({3}, {-2, 0, 3}))).value() == Tensor({3}, {0, 0, 3}));
  CHECK(sigmoid(tape.constant(Tensor({1}, {0.0}))).value()[0] == 0.5);
  CHECK(sigmoid(tape.constant(Tensor({1}, {std::log(3.0)}))).value()[0] == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("dropout") {
  std::mt19937_64 rng(5);
  Tape tape;
  const Tensor x = random_tensor({4, 10}, rng);
  Var v = tape.constant(x);
  CHECK(dropout(v, 0.0, true, rng).value() == x);
  CHECK(dropout(v, 0.2, false, rng).value() == x);
  CHECK_THROWS_AS(dropout(v, 1.0, true, rng), ConfigError);

  const Tensor ones({1, 1000000}, 1.0);
  const Tensor y = dropout(tape.constant(ones), 0.2, true, rng).value();
  double mean = 0.0;
  std::size_t zeros = 0, scaled = 0;
  for (double e : y.values()) {
    mean += e;
    zeros += e == 0.0;
    scaled += e == 1.0 / 0.8;
  }
  CHECK(zeros + scaled == y.size());
  mean /= static_cast<double>(y.size());
  CHECK(std::abs(mean - 1.0) < 0.01);
  CHECK(zeros > 190000);
  CHECK(zeros < 210000);

  std::mt19937_64 a(9), b(9);
  CHECK(dropout(tape.constant(x), 0.3, true, a).value() == dropout(tape.constant(x), 0.3, true, b).value());
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives ones") {
    Tape tape;
    Var x = tape.variable(Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
    tape.backward(sum(x));
    CHECK(x.grad() == Tensor({2, 3}, 1.0));
  }
  SUBCASE("sigmoid of a dot product at zero") {
    ParamStore params;
    Parameter& w = params.add("w", Tensor({1, 3, 1}, {1.0, -1.0, 0.5}));
    params.add("b", Tensor({1}));
    const Tensor x({3, 1}, {2.0, 3.0, 2.0});  // w.x = 0
    Tape tape;
    Var y = sigmoid(conv1d(tape.constant(x), tape.param(w), tape.param(params.get("b")), 1, Padding::same));
    CHECK(y.value()[0] == 0.5);
    tape.backward(y);
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad[i] == doctest::Approx(0.25 * x[i]));
  }
  SUBCASE("parameter gradients accumulate until zero_grad") {
    ParamStore params;
    Parameter& p = params.add("p", Tensor({1, 2}, {1.0, 2.0}));
    for (int i = 0; i < 2; ++i) {
      Tape tape;
      tape.backward(sum(tape.param(p)));
    }
    CHECK(p.grad == Tensor({1, 2}, 2.0));
    params.zero_grad();
    CHECK(p.grad == Tensor({1, 2}, 0.0));
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.variable(Tensor({2}))), ConfigError);
  }
}

TEST_CASE("gradient check of every differentiable operation") {
  std::mt19937_64 rng(6);
  ParamStore params;
  params.add("x", random_tensor({3, 8}, rng));
  params.add("w1", random_tensor({4, 3, 3}, rng, 0.5));
  params.add("b1", random_tensor({4}, rng));
  params.add("w2", random_tensor({4, 2, 4}, rng, 0.5));
  params.add("b2", random_tensor({2}, rng));
  params.add("p", random_tensor({1, 8}, rng));
  const Tensor target = random_tensor({3, 7}, rng);

  std::mt19937_64 mask_rng(1);
  const auto loss = [&](Tape& tape) {
    Var x = tape.param(params.get("x"));
    Var h = conv1d(x, tape.param(params.get("w1")), tape.param(params.get("b1")), 2, Padding::same);
    h = sigmoid(h);
    std::mt19937_64 frozen = mask_rng;
    h = dropout(h, 0.25, true, frozen);
    Var u = conv1d_transpose(h, tape.param(params.get("w2")), tape.param(params.get("b2")), 2);
    Var c = concat_channels(u, tape.param(params.get("p")));
    c = add(c, x);
    c = resize_frames(c, 10);
    c = resize_frames(c, 7);
    return add(squared_error(c, target), sum(relu(c)));
  };
  CHECK(gradient_check(params, loss) < 1e-6);
}

TEST_CASE("random two-layer conv net gradient") {
  std::mt19937_64 rng(7);
  ParamStore params;
  params.add("w1", random_tensor({6, 3, 3}, rng, 0.5));
  params.add("b1", random_tensor({6}, rng, 0.1));
  params.add("w2", random_tensor({2, 6, 3}, rng, 0.5));
  params.add("b2", random_tensor({2}, rng, 0.1));
  const Tensor x = random_tensor({3, 16}, rng);
  const Tensor target = random_tensor({2, 16}, rng);
  const auto loss = [&](Tape& tape) {
    Var h = relu(conv1d(tape.constant(x), tape.param(params.get("w1")), tape.param(params.get("b1")), 1,
                        Padding::same));
    Var y = sigmoid(conv1d(h, tape.param(params.get("w2")), tape.param(params.get("b2")), 1, Padding::same));
    return squared_error(y, target);
  };
  CHECK(gradient_check(params, loss) < 1e-6);
}

TEST_CASE("Adam") {
  ParamStore params;
  Parameter& p = params.add("p", Tensor({1}, {3.0}));
  Adam opt({0.1});
  for (int i = 0; i < 500; ++i) {
    params.zero_grad();
    Tape tape;
    tape.backward(squared_error(tape.param(p), Tensor({1}, {1.0})));
    opt.step(params);
  }
  CHECK(p.value[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(opt.steps() == 500);
  opt.reset();
  CHECK(opt.steps() == 0);

  // First step moves each entry by the learning rate against the gradient sign.
  ParamStore q;
  Parameter& r = q.add("r", Tensor({2}, {0.0, 0.0}));
  r.grad = Tensor({2}, {4.0, -0.01});
  Adam fresh({0.01});
  fresh.step(q);
  CHECK(r.value[0] == doctest::Approx(-0.01));
  CHECK(r.value[1] == doctest::Approx(0.01));
}

TEST_CASE("glorot_uniform bounds and determinism") {
  std::mt19937_64 a(1), b(1);
  const Tensor t = glorot_uniform({8, 4, 3}, 12, 24, a);
  const double bound = std::sqrt(6.0 / 36.0);
  for (double v : t.values()) CHECK(std::abs(v) <= bound);
  CHECK(glorot_uniform({8, 4, 3}, 12, 24, b) == t);
}

TEST_CASE("to_channels and to_frames are inverse transposes") {
  std::mt19937_64 rng(8);
  const Matrix m = testing::random_matrix(5, 3, rng);
  const Tensor t = to_channels(m);
  CHECK(t.shape() == std::vector<std::size_t>{3, 5});
  CHECK(t.at(2, 4) == m(4, 2));
  CHECK(to_frames(t) == m);
}
