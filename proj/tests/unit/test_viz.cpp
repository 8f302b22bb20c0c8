#include <doctest.h>

#include "cac/errors.hpp"
#include "cac/viz.hpp"
#include "helpers.hpp"

using namespace cac;
using namespace cac::viz;
using cac::test::random_matrix;
using cac::test::TempDir;

namespace {

// Leading eigenvector of W W^T by power iteration.
Vector power_iteration(const Matrix& w) {
  const Matrix g = w * w.transpose();
  Vector v = Vector::Ones(g.rows());
  for (int i = 0; i < 5000; ++i) {
    Vector next = g * v;
    next.normalize();
    if ((next - v).norm() < 1e-15) break;
    v = next;
  }
  return v;
}

}  // namespace

TEST_CASE("saliency matches the power-iteration oracle") {
  Rng rng(110);
  for (Weighting weighting : {Weighting::elementwise, Weighting::column_norm}) {
    const PatchFeatures f{4, 5, random_matrix(20, 6, rng)};
    const Matrix proj = random_matrix(20, 6, rng);
    const SaliencyMap s = svd_saliency(f, proj, weighting);
    CHECK(s.values.rows() == 4);
    CHECK(s.values.cols() == 5);
    CHECK(!s.degenerate);
    const Vector oracle = power_iteration(weighted_features(f, proj, weighting));
    const Eigen::Map<const Vector> got(s.values.data(), 20);
    const double sign = got.dot(oracle) < 0 ? -1.0 : 1.0;
    CHECK((got - sign * oracle).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(got.norm() == doctest::Approx(1.0));
    CHECK(got.sum() >= 0.0);
  }
}

TEST_CASE("weightings") {
  Rng rng(111);
  const PatchFeatures f{2, 2, random_matrix(4, 3, rng)};
  const Matrix proj = random_matrix(4, 3, rng);
  CHECK(weighted_features(f, proj, Weighting::elementwise) == f.values.cwiseProduct(proj));
  const Matrix cn = weighted_features(f, proj, Weighting::column_norm);
  for (int j = 0; j < 3; ++j) CHECK((cn.col(j) - f.values.col(j) * proj.col(j).norm()).norm() < 1e-12);
  CHECK(parse_weighting("column_norm") == Weighting::column_norm);
  CHECK_THROWS(parse_weighting("rows"));
}

TEST_CASE("rank-one input recovers its left factor") {
  Vector u(6);
  u << 0.1, 0.5, -0.2, 0.3, 0.7, 0.05;
  u.normalize();
  Vector v(3);
  v << 1.0, -2.0, 0.5;
  const PatchFeatures f{2, 3, u * v.transpose()};
  const SaliencyMap s = svd_saliency(f, Matrix::Ones(6, 3));
  const Eigen::Map<const Vector> got(s.values.data(), 6);
  CHECK((got - u).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("degenerate and invalid inputs") {
  Rng rng(112);
  const PatchFeatures f{2, 2, random_matrix(4, 3, rng)};
  const SaliencyMap zero = svd_saliency(f, Matrix::Zero(4, 3));
  CHECK(zero.degenerate);
  CHECK(zero.values.isZero());
  CHECK_THROWS_AS(svd_saliency(f, Matrix::Zero(5, 3)), ShapeError);
  const CountHead simple = make_head(HeadKind::simple, 2, 2, 3, 1);
  CHECK_THROWS_AS(svd_saliency(f, simple), UsageError);
  CountHead proj = make_head(HeadKind::projection, 2, 2, 3, 1);
  proj.projection_weights() = random_matrix(4, 3, rng);
  CHECK(svd_saliency(f, proj).values == svd_saliency(f, proj.projection_weights()).values);
}

TEST_CASE("report rendering") {
  TempDir dir;
  Rng rng(113);
  std::vector<Image8> images(3, Image8(40, 30, 3, 90));
  std::vector<Matrix> maps{random_matrix(4, 4, rng), random_matrix(4, 4, rng), Matrix::Zero(4, 4)};
  const auto files = render_report(images, maps, {3, 5, NAN}, {2.5, 6.1, 0.0}, dir.path());
  REQUIRE(files.size() == 4);
  CHECK(files.back().filename() == "grid.png");
  const Image8 panel = read_image(dir / "panel_000.png");
  CHECK(panel.width == 224);
  CHECK(read_image(dir / "grid.png").width == 3 * 224);

  TempDir single;
  CHECK(render_report({images[0]}, {maps[0]}, {1}, {1}, single.path()).size() == 1);
  CHECK_THROWS_AS(render_report(images, {maps[0]}, {1}, {1}, single.path()), UsageError);
  const Image8 gray = map_to_image(maps[0]);
  CHECK(gray.width == 4);
}
