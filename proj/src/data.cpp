#include "cac/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cac/errors.hpp"
#include "cac/rng.hpp"

namespace cac::data {

namespace fs = std::filesystem;
using nlohmann::json;

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw UsageError("unknown split '" + text + "' (expected train, val or test)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Provenance parse_provenance(const std::string& text) {
  if (text == "fsc147") return Provenance::fsc147;
  if (text == "fsc133") return Provenance::fsc133;
  if (text == "carpk") return Provenance::carpk;
  if (text == "synthetic") return Provenance::synthetic;
  throw IngestionError("unknown manifest provenance '" + text + "'");
}

std::string to_string(Provenance provenance) {
  switch (provenance) {
    case Provenance::fsc147: return "fsc147";
    case Provenance::fsc133: return "fsc133";
    case Provenance::carpk: return "carpk";
    case Provenance::synthetic: return "synthetic";
  }
  return "?";
}

std::vector<const ImageRecord*> DatasetManifest::split(Split s) const {
  std::vector<const ImageRecord*> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

std::vector<double> DatasetManifest::counts(Split s) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(static_cast<double>(r.count));
  }
  return out;
}

const ImageRecord* DatasetManifest::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

fs::path DatasetManifest::resolve(const ImageRecord& record) const {
  const fs::path p(record.path);
  return p.is_absolute() ? p : root / p;
}

namespace {

std::string join_ids(const std::vector<std::string>& ids, std::size_t limit = 20) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) {
    if (i) out += ", ";
    out += ids[i];
  }
  if (ids.size() > limit) out += ", ... (" + std::to_string(ids.size()) + " total)";
  return out;
}

}  // namespace

void validate(const DatasetManifest& manifest) {
  std::vector<std::string> problems;
  std::set<std::string> seen;
  for (const auto& r : manifest.records) {
    if (!seen.insert(r.id).second) problems.push_back(r.id + ": duplicate id");
    if (r.count < 1) problems.push_back(r.id + ": count " + std::to_string(r.count) + " < 1");
    if (r.points && static_cast<std::int64_t>(r.points->size()) != r.count) {
      problems.push_back(r.id + ": " + std::to_string(r.points->size()) + " points but count " +
                         std::to_string(r.count));
    }
  }
  std::map<std::string, std::set<Split>> class_splits;
  for (const auto& [split, names] : manifest.classes) {
    for (const auto& n : names) class_splits[n].insert(split);
  }
  for (const auto& [name, splits] : class_splits) {
    if (splits.size() > 1 && manifest.provenance != Provenance::carpk) {
      problems.push_back("class '" + name + "' listed in several splits");
    }
  }
  for (const auto& r : manifest.records) {
    auto it = class_splits.find(r.class_name);
    if (it == class_splits.end() || !it->second.count(r.split)) {
      problems.push_back(r.id + ": class '" + r.class_name + "' not listed under split " +
                         to_string(r.split));
    }
  }
  if (!problems.empty()) {
    throw IngestionError("manifest invalid: " + join_ids(problems));
  }
}

void rebuild_classes(DatasetManifest& manifest) {
  std::map<Split, std::set<std::string>> sets;
  for (const auto& r : manifest.records) sets[r.split].insert(r.class_name);
  manifest.classes.clear();
  for (Split s : kSplits) {
    manifest.classes[s] = std::vector<std::string>(sets[s].begin(), sets[s].end());
  }
  validate(manifest);
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  json doc;
  doc["version"] = kManifestVersion;
  doc["provenance"] = to_string(manifest.provenance);
  if (!manifest.root.empty()) {
    const fs::path here = fs::weakly_canonical(fs::absolute(path).parent_path());
    const fs::path root = fs::weakly_canonical(fs::absolute(manifest.root));
    if (root != here) doc["root"] = root.string();
  }
  json classes = json::object();
  for (const auto& [split, names] : manifest.classes) classes[to_string(split)] = names;
  doc["classes"] = classes;
  json records = json::array();
  for (const auto& r : manifest.records) {
    json j;
    j["id"] = r.id;
    j["path"] = r.path;
    j["class"] = r.class_name;
    j["count"] = r.count;
    j["split"] = to_string(r.split);
    if (r.width > 0) j["width"] = r.width;
    if (r.height > 0) j["height"] = r.height;
    if (r.points) {
      json pts = json::array();
      for (const auto& p : *r.points) pts.push_back({p.x, p.y});
      j["points"] = pts;
    }
    if (r.boxes) {
      json bxs = json::array();
      for (const auto& b : *r.boxes) bxs.push_back({b.x0, b.y0, b.x1, b.y1});
      j["boxes"] = bxs;
    }
    records.push_back(j);
  }
  doc["records"] = records;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError("malformed manifest " + path.string() + ": " + e.what());
  }
  DatasetManifest m;
  std::vector<std::string> problems;
  try {
    if (doc.value("version", 0) != kManifestVersion) {
      throw IngestionError("unsupported manifest version in " + path.string());
    }
    m.provenance = parse_provenance(doc.at("provenance").get<std::string>());
    m.root = doc.contains("root") ? fs::path(doc["root"].get<std::string>())
                                  : fs::absolute(path).parent_path();
    for (const auto& [key, names] : doc.at("classes").items()) {
      m.classes[parse_split(key)] = names.get<std::vector<std::string>>();
    }
    for (const auto& j : doc.at("records")) {
      ImageRecord r;
      r.id = j.at("id").get<std::string>();
      try {
        r.path = j.at("path").get<std::string>();
        r.class_name = j.at("class").get<std::string>();
        r.count = j.at("count").get<std::int64_t>();
        r.split = parse_split(j.at("split").get<std::string>());
        r.width = j.value("width", 0);
        r.height = j.value("height", 0);
        if (j.contains("points")) {
          std::vector<Point> pts;
          for (const auto& p : j["points"]) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
          r.points = std::move(pts);
        }
        if (j.contains("boxes")) {
          std::vector<Box> bxs;
          for (const auto& b : j["boxes"]) {
            bxs.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                           b.at(3).get<double>()});
          }
          r.boxes = std::move(bxs);
        }
      } catch (const std::exception& e) {
        problems.push_back(r.id + ": " + e.what());
        continue;
      }
      m.records.push_back(std::move(r));
    }
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw IngestionError("malformed manifest " + path.string() + ": " + e.what());
  }
  if (!problems.empty()) throw IngestionError("malformed records: " + join_ids(problems));
  validate(m);
  return m;
}

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("missing file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IngestionError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::string stem_of(const std::string& file) { return fs::path(file).stem().string(); }

}  // namespace

DatasetManifest load_fsc147(const fs::path& root) {
  if (!fs::is_directory(root)) throw IngestionError("not a directory: " + root.string());
  const json annotations = read_json(root / "annotation_FSC147_384.json");
  const json splits = read_json(root / "Train_Test_Val_FSC_147.json");

  std::map<std::string, std::string> class_of;
  {
    const fs::path p = root / "ImageClasses_FSC147.txt";
    std::ifstream in(p);
    if (!in) throw IngestionError("missing file " + p.string());
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos) throw IngestionError("malformed class line: " + line);
      class_of[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }

  DatasetManifest m;
  m.provenance = Provenance::fsc147;
  m.root = root;
  std::vector<std::string> problems;
  for (const char* key : {"train", "val", "test"}) {
    if (!splits.contains(key)) throw IngestionError(std::string("split file lacks '") + key + "'");
    const Split split = parse_split(key);
    for (const auto& name_json : splits[key]) {
      const std::string file = name_json.get<std::string>();
      ImageRecord r;
      r.id = stem_of(file);
      r.path = "images_384_VarV2/" + file;
      r.split = split;
      auto cls = class_of.find(file);
      if (cls == class_of.end()) {
        problems.push_back(r.id + ": no class entry");
        continue;
      }
      r.class_name = cls->second;
      if (!annotations.contains(file)) {
        problems.push_back(r.id + ": no annotation");
        continue;
      }
      const json& a = annotations[file];
      std::vector<Point> pts;
      for (const auto& p : a.value("points", json::array())) {
        pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      }
      if (a.contains("box_examples_coordinates")) {
        std::vector<Box> bxs;
        for (const auto& quad : a["box_examples_coordinates"]) {
          double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
          for (const auto& c : quad) {
            x0 = std::min(x0, c.at(0).get<double>());
            y0 = std::min(y0, c.at(1).get<double>());
            x1 = std::max(x1, c.at(0).get<double>());
            y1 = std::max(y1, c.at(1).get<double>());
          }
          bxs.push_back({x0, y0, x1, y1});
        }
        r.boxes = std::move(bxs);
      }
      r.width = a.value("W", 0);
      r.height = a.value("H", 0);
      r.count = static_cast<std::int64_t>(pts.size());
      if (r.count == 0) {
        problems.push_back(r.id + ": zero count");
        continue;
      }
      r.points = std::move(pts);
      m.records.push_back(std::move(r));
    }
  }
  if (!problems.empty()) throw IngestionError("FSC-147 ingestion failed: " + join_ids(problems));
  rebuild_classes(m);
  return m;
}

DatasetKind parse_dataset_kind(const std::string& text) {
  if (text == "fsc147") return DatasetKind::fsc147;
  if (text == "manifest") return DatasetKind::manifest;
  if (text == "carpk") return DatasetKind::carpk;
  throw UsageError("unknown dataset kind '" + text + "' (expected fsc147, manifest or carpk)");
}

DatasetManifest load_manifest(const fs::path& root, DatasetKind kind) {
  switch (kind) {
    case DatasetKind::fsc147: return load_fsc147(root);
    case DatasetKind::carpk: return carpk_adapter(root);
    case DatasetKind::manifest:
      return read_manifest(fs::is_directory(root) ? root / "manifest.json" : root);
  }
  throw UsageError("unknown dataset kind");
}

DatasetManifest carpk_adapter(const fs::path& root_in) {
  fs::path root = root_in;
  if (!fs::is_directory(root / "Annotations") && fs::is_directory(root / "data" / "Annotations")) {
    root = root / "data";
  }
  if (!fs::is_directory(root / "Annotations")) {
    throw IngestionError("CARPK annotations missing under " + root_in.string());
  }
  DatasetManifest m;
  m.provenance = Provenance::carpk;
  m.root = root;
  std::vector<std::string> problems;
  for (const char* key : {"train", "test"}) {
    const fs::path list = root / "ImageSets" / (std::string(key) + ".txt");
    std::ifstream in(list);
    if (!in) throw IngestionError("missing file " + list.string());
    std::string id;
    while (in >> id) {
      ImageRecord r;
      r.id = id;
      r.path = "Images/" + id + ".png";
      r.class_name = "cars";
      r.split = parse_split(key);
      const fs::path ann = root / "Annotations" / (id + ".txt");
      std::ifstream a(ann);
      if (!a) {
        problems.push_back(id + ": missing annotation");
        continue;
      }
      std::vector<Box> boxes;
      std::string line;
      while (std::getline(a, line)) {
        std::istringstream ls(line);
        Box b;
        if (ls >> b.x0 >> b.y0 >> b.x1 >> b.y1) boxes.push_back(b);
      }
      r.count = static_cast<std::int64_t>(boxes.size());
      if (r.count == 0) {
        problems.push_back(id + ": zero count");
        continue;
      }
      r.boxes = std::move(boxes);
      m.records.push_back(std::move(r));
    }
  }
  if (!problems.empty()) throw IngestionError("CARPK ingestion failed: " + join_ids(problems));
  // Single-class dataset: the split-disjointness rule is waived for it.
  m.classes[Split::train] = {"cars"};
  m.classes[Split::val] = {};
  m.classes[Split::test] = {"cars"};
  std::set<std::string> seen;
  for (const auto& r : m.records) {
    if (!seen.insert(r.id).second) throw IngestionError("duplicate CARPK id " + r.id);
  }
  return m;
}

DatasetManifest exclude_class(const DatasetManifest& manifest, const std::string& class_name) {
  DatasetManifest out = manifest;
  std::erase_if(out.records, [&](const ImageRecord& r) { return r.class_name == class_name; });
  for (auto& [split, names] : out.classes) std::erase(names, class_name);
  return out;
}

DatasetManifest pretraining_manifest(const DatasetManifest& fsc133, bool exclude_cars) {
  return exclude_cars ? exclude_class(fsc133, "cars") : fsc133;
}

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

// Mass of N(mu, sigma^2) on each unit cell [j, j+1), j in [0, n).
std::vector<double> cell_masses(double mu, double sigma, int n, int& first, int& last) {
  const double reach = 8.0 * sigma + 1.0;
  first = std::max(0, static_cast<int>(std::floor(mu - reach)));
  last = std::min(n - 1, static_cast<int>(std::ceil(mu + reach)));
  std::vector<double> out;
  if (last < first) return out;
  out.reserve(static_cast<std::size_t>(last - first + 1));
  double lo = normal_cdf((first - mu) / sigma);
  for (int j = first; j <= last; ++j) {
    const double hi = normal_cdf((j + 1 - mu) / sigma);
    out.push_back(hi - lo);
    lo = hi;
  }
  return out;
}

}  // namespace

DensityMap gaussian_density(const std::vector<Point>& points, int width, int height,
                            double sigma) {
  if (!(sigma > 0.0)) throw DomainError("density sigma must be positive");
  if (width <= 0 || height <= 0) throw ShapeError("density map size must be positive");
  std::vector<std::string> bad;
  for (const auto& p : points) {
    if (!(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height)) {
      std::ostringstream os;
      os << '(' << p.x << ", " << p.y << ')';
      bad.push_back(os.str());
    }
  }
  if (!bad.empty()) {
    throw DomainError("points outside " + std::to_string(width) + "x" + std::to_string(height) +
                      ": " + join_ids(bad));
  }
  DensityMap map{Matrix::Zero(height, width), sigma};
  for (const auto& p : points) {
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
    const auto gx = cell_masses(p.x, sigma, width, x0, x1);
    const auto gy = cell_masses(p.y, sigma, height, y0, y1);
    for (int y = y0; y <= y1; ++y) {
      const double wy = gy[static_cast<std::size_t>(y - y0)];
      for (int x = x0; x <= x1; ++x) map.values(y, x) += wy * gx[static_cast<std::size_t>(x - x0)];
    }
  }
  return map;
}

std::vector<Point> rescale_points(const std::vector<Point>& points, int src_w, int src_h,
                                  int dst_w, int dst_h) {
  if (src_w <= 0 || src_h <= 0) throw ShapeError("source size must be positive");
  const double sx = static_cast<double>(dst_w) / src_w;
  const double sy = static_cast<double>(dst_h) / src_h;
  std::vector<Point> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back({p.x * sx, p.y * sy});
  return out;
}

ImageTensor preprocess(const Image8& image, int size, const Normalization& norm) {
  if (image.channels != 3) throw ShapeError("preprocess expects an RGB image");
  if (image.width == size && image.height == size) return normalize(image, norm);
  return normalize(resize_bilinear_aa(image, size, size), norm);
}

ImageTensor preprocess(const fs::path& path, int size, const Normalization& norm) {
  return preprocess(read_image(path), size, norm);
}

Image8 render_dots(const std::vector<Point>& centers, int size, double radius, std::uint64_t seed) {
  Rng rng(seed);
  Image8 img(size, size, 3);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      double v = 24.0 + rng.uniform(-10.0, 10.0);
      for (const auto& c : centers) {
        const double d = std::hypot(x + 0.5 - c.x, y + 0.5 - c.y);
        const double cover = std::clamp(radius + 0.5 - d, 0.0, 1.0);
        v = std::max(v, 24.0 + cover * 206.0);
      }
      const auto b = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
      for (int ch = 0; ch < 3; ++ch) img.at(y, x, ch) = b;
    }
  }
  return img;
}

DatasetManifest generate_dot_dataset(const fs::path& out_dir, const SyntheticConfig& config) {
  if (config.n_images < 3) throw ConfigError("synthetic dataset needs at least 3 images");
  if (config.min_dots < 1 || config.max_dots < config.min_dots) {
    throw ConfigError("synthetic dot range must satisfy 1 <= min <= max");
  }
  if (config.val_fraction < 0 || config.test_fraction < 0 ||
      config.val_fraction + config.test_fraction >= 1.0) {
    throw ConfigError("synthetic split fractions must be non-negative and sum below 1");
  }
  fs::create_directories(out_dir / "images");
  Rng rng(config.seed);
  const int n = config.n_images;
  const int n_val = static_cast<int>(std::lround(n * config.val_fraction));
  const int n_test = static_cast<int>(std::lround(n * config.test_fraction));

  DatasetManifest m;
  m.provenance = Provenance::synthetic;
  m.root = out_dir;
  const double margin = config.radius + 1.0;
  const double min_gap = 2.0 * config.radius + 2.0;
  for (int i = 0; i < n; ++i) {
    const int k = config.min_dots +
                  static_cast<int>(rng.below(static_cast<std::uint64_t>(config.max_dots - config.min_dots + 1)));
    std::vector<Point> centers;
    int attempts = 0;
    while (static_cast<int>(centers.size()) < k) {
      if (++attempts > 100000) throw ConfigError("cannot place that many dots without overlap");
      const Point c{rng.uniform(margin, config.size - margin), rng.uniform(margin, config.size - margin)};
      bool ok = true;
      for (const auto& o : centers) {
        if (std::hypot(c.x - o.x, c.y - o.y) < min_gap) ok = false;
      }
      if (ok) centers.push_back(c);
    }
    char id[32];
    std::snprintf(id, sizeof id, "dots_%05d", i);
    ImageRecord r;
    r.id = id;
    r.path = std::string("images/") + id + ".png";
    r.split = i < n - n_val - n_test ? Split::train : (i < n - n_test ? Split::val : Split::test);
    r.class_name = r.split == Split::train ? "dots_a" : (r.split == Split::val ? "dots_b" : "dots_c");
    r.count = k;
    r.points = centers;
    r.width = config.size;
    r.height = config.size;
    write_png(out_dir / r.path, render_dots(centers, config.size, config.radius, rng.next_u64()));
    m.records.push_back(std::move(r));
  }
  rebuild_classes(m);
  write_manifest(out_dir / "manifest.json", m);
  return m;
}

}  // namespace cac::data
