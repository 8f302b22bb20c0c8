#include <doctest.h>

#include "cac/errors.hpp"
#include "cac/localize.hpp"
#include "helpers.hpp"

using namespace cac;
using namespace cac::localize;
using cac::localize::LocalizationHead;
using cac::test::random_matrix;
using cac::test::TempDir;

TEST_CASE("localization head output geometry") {
  Rng rng(100);
  LocalizationHead head(4, {5, 3, 1});
  head.init(rng);
  const PatchFeatures f{3, 2, random_matrix(6, 4, rng)};
  const data::DensityMap map = localize::localize(f, head);
  CHECK(map.values.rows() == 24);
  CHECK(map.values.cols() == 16);
  CHECK((map.values.array() >= 0).all());
  CHECK(head.params().size() == 6);
  CHECK(head.params()[0]->name == "loc.blocks.0.conv.weight");
  CHECK_THROWS_AS(LocalizationHead(4, {5, 3}), ConfigError);
  CHECK_THROWS_AS(localize::localize(PatchFeatures{3, 2, random_matrix(6, 7, rng)}, head), ShapeError);
}

TEST_CASE("localization head gradients") {
  Rng rng(101);
  LocalizationHead head(3, {4, 3, 1});
  head.init(rng);
  // keep pre-activations away from the ReLU kink
  for (auto& c : head.convs) c.bias.value.setConstant(0.3);
  const PatchFeatures f{2, 2, random_matrix(4, 3, rng).cwiseAbs()};
  data::DensityMap target{random_matrix(16, 16, rng).cwiseAbs(), 4.0};

  HeadCache cache;
  const data::DensityMap pred = localize::localize(f, head, &cache);
  zero_grads(head.params());
  localize_backward(head, cache, loc_loss_grad(pred, target));
  auto loss = [&] { return loc_loss(localize::localize(f, head), target); };
  for (Parameter* p : head.params()) {
    INFO(p->name);
    const Matrix analytic = p->grad;
    CHECK(cac::test::rel_error(analytic, cac::test::numeric_grad(p->value, loss), 1e-10) < 1e-5);
  }
  CHECK(loc_loss(target, target) == 0.0);
}

TEST_CASE("localizer save and load") {
  TempDir dir;
  Rng rng(102);
  LocalizationHead head(4, {6, 2, 1});
  head.init(rng);
  save_localizer(dir / "loc.safetensors", head, "abc");
  const LocalizationHead back = load_localizer(dir / "loc.safetensors");
  CHECK(back.convs.size() == 3);
  CHECK(back.feature_dim() == 4);
  CHECK(checksum(back.params()) == checksum(head.params()));
  CHECK_THROWS_AS(load_localizer(dir / "none.safetensors"), LoadError);
}

TEST_CASE("localizer training leaves the backbone untouched and fits held-out maps") {
  TempDir dir;
  data::SyntheticConfig sc;
  sc.n_images = 24;
  sc.seed = 3;
  const data::DatasetManifest m = data::generate_dot_dataset(dir.path(), sc);
  const BackboneParams backbone = BackboneParams::random(BackboneConfig::tiny(), 1);
  LocalizationHead head(16, {8, 4, 1});
  Rng rng(103);
  head.init(rng);
  LocalizerConfig cfg;
  cfg.epochs = 4;
  cfg.adam.lr = 3e-3;
  const LocalizerResult r = train_localizer(m, backbone, head, cfg);
  CHECK(r.epoch_losses.size() == 4);
  CHECK(r.backbone_checksum_before == r.backbone_checksum_after);
  CHECK(r.heldout_images > 0);
  CHECK(r.heldout_after < r.heldout_before);
  CHECK(r.epoch_losses.back() < r.epoch_losses.front());
}
