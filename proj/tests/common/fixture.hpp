#pragma once

// Miniature dataset trees in the upstream on-disk layouts, with planted
// duplicates, for curation and ingestion tests.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "cac/data.hpp"
#include "cac/image.hpp"
#include "cac/rng.hpp"

namespace cac::fixture {

struct FixtureImage {
  std::string id;
  std::string split;
  std::string class_name;
  int count = 1;
  std::uint64_t seed = 0;  // images sharing a seed are pixel-identical
  int noise = 0;           // +-noise on a few pixels, for near duplicates
};

inline Image8 fixture_pixels(std::uint64_t seed, int noise, int width = 64, int height = 48) {
  Rng rng(seed * 7919 + 17);
  Image8 img(width, height, 3);
  // smooth blobs so the images survive resizing with distinct signatures
  const double cx = rng.uniform(0, width), cy = rng.uniform(0, height);
  const double base = rng.uniform(20, 200);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = base + 40.0 * std::sin((x - cx) * 0.2 + c) * std::cos((y - cy) * 0.15);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
      }
  if (noise > 0) {
    Rng jitter(seed * 31 + static_cast<std::uint64_t>(noise));
    for (int k = 0; k < 20; ++k) {
      const int x = static_cast<int>(jitter.below(width)), y = static_cast<int>(jitter.below(height));
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = static_cast<std::uint8_t>(std::clamp(img.at(y, x, c) + noise, 0, 255));
      }
    }
  }
  return img;
}

/// Writes annotation_FSC147_384.json, Train_Test_Val_FSC_147.json,
/// ImageClasses_FSC147.txt and images_384_VarV2/<id>.png.
inline void write_fsc147_tree(const std::filesystem::path& root, const std::vector<FixtureImage>& images) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images_384_VarV2");
  nlohmann::json ann = nlohmann::json::object();
  nlohmann::json splits = {{"train", nlohmann::json::array()},
                           {"val", nlohmann::json::array()},
                           {"test", nlohmann::json::array()}};
  std::ofstream classes(root / "ImageClasses_FSC147.txt");
  for (const auto& im : images) {
    const std::string file = im.id + ".png";
    const Image8 px = fixture_pixels(im.seed, im.noise);
    write_png(root / "images_384_VarV2" / file, px);
    Rng rng(im.seed + 1000 + static_cast<std::uint64_t>(im.count));
    nlohmann::json pts = nlohmann::json::array();
    for (int i = 0; i < im.count; ++i) {
      pts.push_back({rng.uniform(1, px.width - 1), rng.uniform(1, px.height - 1)});
    }
    ann[file] = {{"points", pts},
                 {"W", px.width},
                 {"H", px.height},
                 {"box_examples_coordinates",
                  nlohmann::json::array({nlohmann::json::array({{1, 1}, {1, 5}, {5, 5}, {5, 1}})})}};
    splits[im.split].push_back(file);
    classes << file << '\t' << im.class_name << '\n';
  }
  std::ofstream(root / "annotation_FSC147_384.json") << ann.dump();
  std::ofstream(root / "Train_Test_Val_FSC_147.json") << splits.dump();
}

/// A small tree exercising every curation stage:
/// * 101 / 205: identical, train vs val (leak, equal counts)
/// * 102 / 206 / 301: identical, across all three splits, counts differ (kept 206)
/// * 103 / 104: identical, both train, equal counts
/// * 105 / 106: near duplicates, both train, equal counts
/// * classes "gulls" (val) and "terns" (test) merge into "birds"
inline std::vector<FixtureImage> curation_images() {
  return {
      {"101", "train", "birds", 5, 1},   {"102", "train", "apples", 8, 2},
      {"103", "train", "apples", 4, 3},  {"104", "train", "apples", 4, 3},
      {"105", "train", "birds", 6, 5},   {"106", "train", "birds", 6, 5, 9},
      {"107", "train", "apples", 3, 7},  {"108", "train", "birds", 2, 8},
      {"201", "val", "gulls", 4, 11},    {"202", "val", "grapes", 9, 12},
      {"203", "val", "gulls", 7, 13},    {"205", "val", "gulls", 5, 1},
      {"206", "val", "grapes", 9, 2},    {"207", "val", "grapes", 1, 17},
      {"301", "test", "terns", 10, 2},   {"302", "test", "pens", 3, 22},
      {"303", "test", "terns", 2, 23},   {"304", "test", "pens", 11, 24},
  };
}

inline void write_curation_inputs(const std::filesystem::path& dir) {
  std::ofstream(dir / "merges.csv") << "# source,target\ngulls,birds\nterns,birds\n";
  std::ofstream(dir / "kept.csv") << "# a,b,kept\n102,206,206\n102,301,206\n";
}

}  // namespace cac::fixture
