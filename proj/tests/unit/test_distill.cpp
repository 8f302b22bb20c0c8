#include <doctest.h>

#include "cac/distill.hpp"
#include "cac/errors.hpp"
#include "helpers.hpp"

using namespace cac;
using namespace cac::distill;

namespace {

Vector random_vector(int n, Rng& rng, double scale = 1.0) {
  Vector v(n);
  for (int i = 0; i < n; ++i) v[i] = scale * rng.normal();
  return v;
}

// H(P_t, P_s) summed over pairs, written out directly.
double oracle_loss(const std::vector<CropLogits>& t, const std::vector<CropLogits>& s, double tt,
                   double ts) {
  auto softmax = [](const Vector& z, double tau) {
    Vector e(z.size());
    double sum = 0;
    for (int i = 0; i < z.size(); ++i) sum += (e[i] = std::exp(z[i] / tau));
    return Vector(e / sum);
  };
  double total = 0;
  for (const auto& a : t) {
    const Vector pt = softmax(a.logits, tt);
    for (const auto& b : s) {
      if (a.crop_id == b.crop_id) continue;
      const Vector ps = softmax(b.logits, ts);
      for (int i = 0; i < pt.size(); ++i) total -= pt[i] * std::log(ps[i]);
    }
  }
  return total;
}

struct Crops {
  std::vector<CropLogits> teacher, student;
};

Crops make_crops(Rng& rng, int dim, int locals) {
  Crops c;
  c.teacher = {{0, random_vector(dim, rng)}, {1, random_vector(dim, rng)}};
  c.student = {{0, random_vector(dim, rng)}, {1, random_vector(dim, rng)}};
  for (int i = 0; i < locals; ++i) c.student.push_back({2 + i, random_vector(dim, rng)});
  return c;
}

}  // namespace

TEST_CASE("sharpened distributions") {
  Rng rng(30);
  const Vector z = random_vector(10, rng, 3.0);
  for (double tau : {0.04, 0.1, 1.0, 5.0}) {
    const Vector p = sharpen(z, tau).probs;
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK((p.array() > 0).all());
    // invariant to a constant shift of the logits
    const Vector q = sharpen((z.array() + 123.0).matrix(), tau).probs;
    CHECK((p - q).cwiseAbs().maxCoeff() < 1e-12);
  }
  // lower temperature concentrates mass on the argmax
  Eigen::Index arg;
  z.maxCoeff(&arg);
  CHECK(sharpen(z, 0.04).probs[arg] > sharpen(z, 1.0).probs[arg]);

  CHECK_THROWS_AS(sharpen(z, 0.0), DomainError);
  CHECK_THROWS_AS(sharpen(Vector(), 1.0), ShapeError);
}

TEST_CASE("distillation loss matches the oracle and skips same-view pairs") {
  Rng rng(31);
  const Crops c = make_crops(rng, 7, 4);
  const DistillTerms terms = distill_loss(c.teacher, c.student, 0.04, 0.1);
  CHECK(terms.pairs == 2 * 6 - 2);
  CHECK(terms.loss == doctest::Approx(oracle_loss(c.teacher, c.student, 0.04, 0.1)).epsilon(1e-10));
  CHECK(terms.loss >= entropy_lower_bound(c.teacher, c.student, 0.04) - 1e-12);

  // the bound is met when student and teacher agree at equal temperatures
  Crops same = c;
  for (auto& s : same.student) s.logits = same.teacher[0].logits;
  same.teacher[1].logits = same.teacher[0].logits;
  const DistillTerms eq = distill_loss(same.teacher, same.student, 0.5, 0.5);
  CHECK(eq.loss == doctest::Approx(entropy_lower_bound(same.teacher, same.student, 0.5)).epsilon(1e-10));
}

TEST_CASE("distillation gradients match central differences") {
  Rng rng(32);
  Crops c = make_crops(rng, 5, 3);
  const double tt = 0.07, ts = 0.3;
  const DistillTerms terms = distill_loss(c.teacher, c.student, tt, ts);
  const double h = 1e-6;
  for (std::size_t j = 0; j < c.student.size(); ++j) {
    for (int i = 0; i < 5; ++i) {
      const double keep = c.student[j].logits[i];
      c.student[j].logits[i] = keep + h;
      const double up = distill_loss(c.teacher, c.student, tt, ts).loss;
      c.student[j].logits[i] = keep - h;
      const double down = distill_loss(c.teacher, c.student, tt, ts).loss;
      c.student[j].logits[i] = keep;
      const double num = (up - down) / (2 * h);
      CHECK(std::abs(num - terms.student_grads[j][i]) <= 1e-4 * std::max(std::abs(num), 1e-3));
    }
  }
}

TEST_CASE("distillation input checks") {
  Rng rng(33);
  Crops c = make_crops(rng, 4, 1);
  auto one = c.teacher;
  one.pop_back();
  CHECK_THROWS_AS(distill_loss(one, c.student, 0.1, 0.1), UsageError);
  c.student[2].logits = random_vector(3, rng);
  CHECK_THROWS_AS(distill_loss(c.teacher, c.student, 0.1, 0.1), ShapeError);
}

TEST_CASE("moving-average teacher stays inside the convex hull") {
  Rng rng(34);
  for (double m : {0.0, 0.5, 0.996, 1.0}) {
    Parameter t("w", {3, 4}, 3, 4), s("w", {3, 4}, 3, 4);
    t.value = cac::test::random_matrix(3, 4, rng);
    s.value = cac::test::random_matrix(3, 4, rng);
    const Matrix t0 = t.value;
    ema_update({&t}, {&s}, m);
    const Matrix lo = t0.cwiseMin(s.value), hi = t0.cwiseMax(s.value);
    CHECK(((t.value.array() >= lo.array() - 1e-15) && (t.value.array() <= hi.array() + 1e-15)).all());
    CHECK((t.value - (m * t0 + (1 - m) * s.value)).cwiseAbs().maxCoeff() < 1e-15);
    if (m == 1.0) CHECK(t.value == t0);
    if (m == 0.0) CHECK(t.value == s.value);
  }
  Parameter a("a", {2}, 1, 2), b("b", {3}, 1, 3);
  CHECK_THROWS_AS(ema_update({&a}, {&b}, 0.9), ShapeError);
  CHECK_THROWS_AS(ema_update({&a}, {&a}, 1.5), DomainError);
}
