#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cac/image.hpp"
#include "cac/tensor.hpp"

namespace cac::data {

enum class Split { train, val, test };
inline constexpr Split kSplits[] = {Split::train, Split::val, Split::test};

Split parse_split(const std::string& text);
std::string to_string(Split split);

enum class Provenance { fsc147, fsc133, carpk, synthetic };
Provenance parse_provenance(const std::string& text);
std::string to_string(Provenance provenance);

struct Point {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point&) const = default;
};

struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
  bool operator==(const Box&) const = default;
};

struct ImageRecord {
  std::string id;
  std::string path;  // relative to the manifest root unless absolute
  std::string class_name;
  std::int64_t count = 0;
  Split split = Split::train;
  std::optional<std::vector<Point>> points;
  std::optional<std::vector<Box>> boxes;
  int width = 0;   // source pixel size, 0 when unknown
  int height = 0;

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::vector<ImageRecord> records;
  std::map<Split, std::vector<std::string>> classes;
  Provenance provenance = Provenance::fsc147;
  std::filesystem::path root;

  std::vector<const ImageRecord*> split(Split s) const;
  std::vector<double> counts(Split s) const;
  const ImageRecord* find(const std::string& id) const;
  std::filesystem::path resolve(const ImageRecord& record) const;
};

inline constexpr int kManifestVersion = 1;

/// Throws IngestionError naming every offending record.
void validate(const DatasetManifest& manifest);

/// Rebuilds the per-split class lists from the records (sorted) and validates.
void rebuild_classes(DatasetManifest& manifest);

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Relative image paths resolve against the manifest's directory unless the
/// document carries an explicit "root".
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Upstream FSC-147 layout: annotation_FSC147_384.json,
/// Train_Test_Val_FSC_147.json, ImageClasses_FSC147.txt, images_384_VarV2/.
DatasetManifest load_fsc147(const std::filesystem::path& root);

enum class DatasetKind { fsc147, manifest, carpk };
DatasetKind parse_dataset_kind(const std::string& text);

/// `root` is a directory for fsc147/carpk; for manifest it is the JSON file or
/// a directory holding manifest.json.
DatasetManifest load_manifest(const std::filesystem::path& root, DatasetKind kind);

/// CARPK devkit layout: Images/, Annotations/<id>.txt ("x0 y0 x1 y1 cls"
/// per line), ImageSets/{train,test}.txt. Counts are box counts. Accepts either
/// the devkit root or its data/ directory.
DatasetManifest carpk_adapter(const std::filesystem::path& root);

/// Drops every record of `class_name` (used to keep cars out of pretraining
/// data when evaluating on CARPK).
DatasetManifest exclude_class(const DatasetManifest& manifest, const std::string& class_name);

/// Training manifest for joint FSC-133 pretraining + CARPK fine-tuning.
DatasetManifest pretraining_manifest(const DatasetManifest& fsc133, bool exclude_cars);

struct DensityMap {
  Matrix values;  // height x width
  double sigma = 0.0;

  double total() const { return values.sum(); }
};

/// Sum of per-point isotropic Gaussians, each integrated exactly over the
/// pixel squares (pixel j spans [j, j+1)). Mass falling outside the image is
/// lost, so interior points contribute exactly 1.
DensityMap gaussian_density(const std::vector<Point>& points, int width, int height,
                            double sigma = 4.0);

/// Maps annotation coordinates from a (src_w x src_h) image onto (dst_w x dst_h).
std::vector<Point> rescale_points(const std::vector<Point>& points, int src_w, int src_h,
                                  int dst_w, int dst_h);

ImageTensor preprocess(const Image8& image, int size = 224, const Normalization& norm = {});
ImageTensor preprocess(const std::filesystem::path& path, int size = 224,
                       const Normalization& norm = {});

struct SyntheticConfig {
  int n_images = 500;
  int size = 56;
  int min_dots = 1;
  int max_dots = 20;
  double radius = 1.5;
  double val_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// Bright discs on a dark noisy background, one class tag per split. Writes
/// PNGs plus manifest.json into `out_dir`.
DatasetManifest generate_dot_dataset(const std::filesystem::path& out_dir,
                                     const SyntheticConfig& config);

/// The image-space part of the generator, exposed for fixtures.
Image8 render_dots(const std::vector<Point>& centers, int size, double radius, std::uint64_t seed);

}  // namespace cac::data
