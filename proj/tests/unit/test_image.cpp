#include <doctest.h>

#include <fstream>

#include "cac/errors.hpp"
#include "cac/image.hpp"
#include "helpers.hpp"

using namespace cac;
using cac::test::TempDir;

namespace {

Image8 noise(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image8 img(w, h, 3);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("resizing") {
  const Image8 img = noise(17, 11, 1);
  CHECK(resize_bilinear_aa(img, 17, 11) == img);
  const Image8 flat(40, 30, 3, 77);
  const Image8 small = resize_bilinear_aa(flat, 7, 9);
  CHECK(small.width == 7);
  for (auto v : small.pixels) CHECK(v == 77);
  const Image8 big = resize_bilinear_aa(flat, 100, 90);
  for (auto v : big.pixels) CHECK(v == 77);

  // antialiasing: a one-pixel checkerboard averages to grey instead of aliasing
  Image8 checker(64, 64, 3);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x)
      for (int c = 0; c < 3; ++c) checker.at(y, x, c) = ((x + y) % 2) ? 255 : 0;
  const Image8 down = resize_bilinear_aa(checker, 8, 8);
  for (auto v : down.pixels) CHECK(std::abs(int(v) - 128) <= 2);
}

TEST_CASE("grayscale and normalization") {
  Image8 rgb(1, 1, 3);
  rgb.at(0, 0, 0) = 255;
  CHECK(to_grayscale(rgb).at(0, 0, 0) == 76);
  CHECK(to_grayscale(rgb).channels == 1);
  const Image8 img = noise(9, 5, 2);
  const Normalization n;
  CHECK(denormalize(normalize(img, n), n) == img);
  CHECK(crop(img, 2, 1, 3, 2).at(1, 2, 1) == img.at(2, 4, 1));
  CHECK_THROWS(crop(img, 8, 0, 3, 2));
}

TEST_CASE("PNG round trip and unreadable inputs") {
  TempDir dir;
  const Image8 img = noise(13, 7, 3);
  write_png(dir / "a.png", img);
  CHECK(read_image(dir / "a.png") == img);
  std::ofstream(dir / "junk.png") << "not an image";
  CHECK_THROWS_AS(read_image(dir / "junk.png"), IngestionError);
  CHECK_THROWS_AS(read_image(dir / "missing.png"), IngestionError);
}
