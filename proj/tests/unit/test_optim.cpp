#include <doctest.h>

#include "cac/errors.hpp"
#include "cac/optim.hpp"
#include "helpers.hpp"

using namespace cac;

TEST_CASE("adam follows the bias-corrected recurrences") {
  Parameter p("w", {2}, 1, 2);
  p.value << 1.0, -2.0;
  AdamOptions opt;
  opt.lr = 0.1;
  Adam adam({&p}, opt);
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  const double grads[3][2] = {{0.5, -1.0}, {0.2, 3.0}, {-0.7, 0.01}};
  for (int t = 1; t <= 3; ++t) {
    p.grad << grads[t - 1][0], grads[t - 1][1];
    adam.step();
    for (int i = 0; i < 2; ++i) {
      const double g = grads[t - 1][i];
      m[i] = 0.9 * m[i] + 0.1 * g;
      v[i] = 0.999 * v[i] + 0.001 * g * g;
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      x[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      CHECK(p.value(0, i) == doctest::Approx(x[i]).epsilon(1e-12));
    }
  }
  CHECK(adam.steps() == 3);
}

TEST_CASE("first step moves each weight by the learning rate") {
  Rng rng(80);
  Parameter p("w", {3, 3}, 3, 3);
  p.grad = cac::test::random_matrix(3, 3, rng);
  AdamOptions opt;
  Adam adam({&p}, opt);
  adam.step();
  for (Eigen::Index i = 0; i < 9; ++i) {
    CHECK(std::abs(p.value.data()[i]) == doctest::Approx(3e-5).epsilon(1e-6));
    CHECK(p.value.data()[i] * p.grad.data()[i] < 0);
  }
}

TEST_CASE("decoupled weight decay") {
  Parameter p("w", {1}, 1, 1);
  p.value(0, 0) = 2.0;
  AdamOptions opt;
  opt.lr = 0.1;
  opt.weight_decay = 0.5;
  Adam adam({&p}, opt);
  adam.step();  // zero gradient: only the decay acts
  CHECK(p.value(0, 0) == doctest::Approx(2.0 * (1 - 0.1 * 0.5)));
}

TEST_CASE("optimizer state survives a save and load") {
  Rng rng(81);
  Parameter a("w", {2, 2}, 2, 2), b("w", {2, 2}, 2, 2);
  AdamOptions opt;
  opt.lr = 0.01;
  Adam first({&a}, opt);
  for (int i = 0; i < 3; ++i) {
    a.grad = cac::test::random_matrix(2, 2, rng);
    first.step();
  }
  TensorFile file;
  first.save_state(file, "optim.");
  b.value = a.value;
  Adam second({&b}, opt);
  second.load_state(file, "optim.");
  CHECK(second.steps() == 3);
  const Matrix g = cac::test::random_matrix(2, 2, rng);
  a.grad = g;
  b.grad = g;
  first.step();
  second.step();
  CHECK(a.value == b.value);
}

TEST_CASE("optimizer option validation") {
  AdamOptions o;
  o.lr = -1;
  CHECK_THROWS_AS(o.validate(), ConfigError);
  o = {};
  o.beta2 = 1.0;
  CHECK_THROWS_AS(o.validate(), ConfigError);
}
