#include <doctest.h>

#include <fstream>
#include <numeric>
#include <set>

#include "../common/fixture.hpp"
#include "cac/curate.hpp"
#include "cac/errors.hpp"
#include "helpers.hpp"

using namespace cac;
using namespace cac::curate;
using cac::test::TempDir;

namespace {

std::uint64_t naive_sad(const Image8& a, const Image8& b, int res) {
  const Image8 ga = to_grayscale(resize_bilinear_aa(a, res, res));
  const Image8 gb = to_grayscale(resize_bilinear_aa(b, res, res));
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < ga.pixels.size(); ++i) s += std::abs(int(ga.pixels[i]) - int(gb.pixels[i]));
  return s;
}

struct Dsu {
  std::vector<int> parent;
  explicit Dsu(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

// All-pairs components of the graph diff <= threshold, singletons dropped.
std::set<std::vector<std::string>> brute_force(const std::vector<std::string>& ids,
                                               const std::vector<Signature>& sigs, double threshold) {
  const int n = static_cast<int>(ids.size());
  Dsu dsu(n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (static_cast<double>(pixel_diff(sigs[i], sigs[j])) <= threshold) dsu.unite(i, j);
  std::map<int, std::vector<std::string>> groups;
  for (int i = 0; i < n; ++i) groups[dsu.find(i)].push_back(ids[i]);
  std::set<std::vector<std::string>> out;
  for (auto& [root, members] : groups) {
    if (members.size() < 2) continue;
    std::sort(members.begin(), members.end(), id_less);
    out.insert(members);
  }
  return out;
}

std::set<std::vector<std::string>> as_set(const std::vector<DuplicateCluster>& clusters) {
  std::set<std::vector<std::string>> out;
  for (const auto& c : clusters) out.insert(c.members);
  return out;
}

const std::filesystem::path kData = CAC_DATA_DIR;

}  // namespace

TEST_CASE("pixel difference is the SAD of resized luma") {
  const Image8 a = fixture::fixture_pixels(1, 0), b = fixture::fixture_pixels(2, 0);
  const DiffMetric metric{64};
  CHECK(pixel_diff(a, b, metric) == static_cast<double>(naive_sad(a, b, 64)));
  CHECK(pixel_diff(a, a, metric) == 0.0);
  CHECK(pixel_diff(a, fixture::fixture_pixels(1, 9), metric) > 0.0);
  const Signature s = make_signature(a, metric);
  CHECK(s.gray.size() == 64u * 64u);
  CHECK(s.tail[0] == 64u * 64u);
  CHECK(s.sum == std::accumulate(s.gray.begin(), s.gray.end(), std::uint64_t{0}));
}

TEST_CASE("the prefilter bound never exceeds the true difference") {
  Rng rng(90);
  const DiffMetric metric{32};
  std::vector<Signature> sigs;
  for (int i = 0; i < 30; ++i) {
    Image8 img(20, 20, 3);
    const int base = static_cast<int>(rng.below(200));
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(base + rng.below(56));
    sigs.push_back(make_signature(img, metric));
  }
  for (std::size_t i = 0; i < sigs.size(); ++i)
    for (std::size_t j = 0; j < sigs.size(); ++j) CHECK(diff_lower_bound(sigs[i], sigs[j]) <= pixel_diff(sigs[i], sigs[j]));
}

TEST_CASE("pair scan equals the all-pairs oracle") {
  const DiffMetric metric{48, 1500.0};
  std::vector<std::string> ids;
  std::vector<Signature> sigs;
  for (int i = 0; i < 40; ++i) {
    // every fifth image repeats an earlier one; every seventh is a light edit
    const std::uint64_t seed = (i % 5 == 4) ? static_cast<std::uint64_t>(i - 3) : static_cast<std::uint64_t>(i);
    const int noise = (i % 7 == 6) ? 3 : 0;
    ids.push_back(std::to_string(1000 - i));
    sigs.push_back(make_signature(fixture::fixture_pixels(i % 7 == 6 ? static_cast<std::uint64_t>(i - 1) : seed, noise), metric));
  }
  const ClusterScan scan = cluster_signatures(ids, sigs, metric, 1);
  CHECK(as_set(scan.exact) == brute_force(ids, sigs, 0.0));
  CHECK(as_set(scan.near) == brute_force(ids, sigs, metric.threshold_near));
  CHECK(!scan.exact.empty());
  CHECK(scan.near.size() >= scan.exact.size());
  CHECK(scan.pairs_evaluated + scan.pairs_pruned == 40u * 39u / 2u);
  CHECK(scan.pairs_pruned > 0);
  for (const auto& c : scan.exact) {
    CHECK(c.kind == ClusterKind::exact);
    CHECK(c.max_pairwise_diff == 0.0);
  }

  const ClusterScan threaded = cluster_signatures(ids, sigs, metric, 3);
  CHECK(as_set(threaded.exact) == as_set(scan.exact));
  CHECK(as_set(threaded.near) == as_set(scan.near));
}

TEST_CASE("numeric-aware id ordering") {
  CHECK(id_less("9", "10"));
  CHECK(!id_less("10", "9"));
  CHECK(id_less("99", "abc"));
  CHECK(id_less("abc", "abd"));
  CHECK(!id_less("7", "7"));
}

TEST_CASE("cluster files round trip") {
  TempDir dir;
  std::vector<DuplicateCluster> cs{{{"3", "12"}, 0.0, ClusterKind::exact},
                                   {{"5", "40", "100"}, 12.0, ClusterKind::exact}};
  write_cluster_file(dir / "c.txt", cs);
  const auto back = read_cluster_file(dir / "c.txt", ClusterKind::near);
  REQUIRE(back.size() == 2);
  CHECK(back[1].members == cs[1].members);
  CHECK(back[1].kind == ClusterKind::near);
  std::ofstream(dir / "one.txt") << "7\n";
  CHECK_THROWS_AS(read_cluster_file(dir / "one.txt", ClusterKind::exact), ConfigError);
}

TEST_CASE("curation of a miniature FSC-147 tree") {
  TempDir dir;
  fixture::write_fsc147_tree(dir / "fsc", fixture::curation_images());
  fixture::write_curation_inputs(dir.path());
  const auto source = data::load_fsc147(dir / "fsc");
  const auto scan = find_duplicate_clusters(source, DiffMetric{}, 2);
  CHECK(scan.unreadable.empty());
  const std::set<std::vector<std::string>> expect_exact{{"101", "205"}, {"102", "206", "301"}, {"103", "104"}};
  CHECK(as_set(scan.exact) == expect_exact);
  auto near = as_set(scan.near);
  CHECK(near.count({"105", "106"}) == 1);

  const auto merges = read_merge_file(dir / "merges.csv");
  const auto kept = read_kept_file(dir / "kept.csv");
  const BuildResult built = build_fsc133(source, merges, kept, scan.near);

  REQUIRE(built.leaks.size() == 3);
  std::set<std::pair<std::string, std::string>> leaks;
  for (const auto& l : built.leaks) leaks.emplace(l.id_a, l.id_b);
  CHECK(leaks == std::set<std::pair<std::string, std::string>>{{"101", "205"}, {"102", "206"}, {"102", "301"}});

  const auto& m = built.manifest;
  CHECK(m.provenance == data::Provenance::fsc133);
  for (const char* gone : {"205", "102", "301", "104", "106"}) CHECK(m.find(gone) == nullptr);
  CHECK(m.records.size() == 13);
  CHECK(m.find("206")->count == 9);
  CHECK(m.find("203")->class_name == "birds");
  CHECK(m.find("203")->split == data::Split::train);
  CHECK(m.find("303")->split == data::Split::train);
  CHECK(m.classes.at(data::Split::train) == std::vector<std::string>{"apples", "birds"});
  CHECK(m.classes.at(data::Split::val) == std::vector<std::string>{"grapes"});
  CHECK(m.classes.at(data::Split::test) == std::vector<std::string>{"pens"});
  CHECK(built.report.count("remove") == 5);
  CHECK(built.report.count("leak") == 3);
  CHECK(built.report.count("discrepancy") == 3);
  CHECK(built.report.count("relabel") == 3);

  SUBCASE("rerunning on the output is a fixed point") {
    const BuildResult again = build_fsc133(m, merges, kept, scan.near);
    CHECK(again.manifest.records == m.records);
    CHECK(again.manifest.classes == m.classes);
    CHECK(again.report.count("remove") == 0);
    CHECK(again.report.count("relabel") == 0);
    CHECK(again.report.count("move") == 0);
    CHECK(again.leaks.empty());
  }

  SUBCASE("audit log is one JSON object per line") {
    write_audit(dir / "audit.jsonl", built.report);
    std::ifstream in(dir / "audit.jsonl");
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.contains("action"));
      ++n;
    }
    CHECK(n == built.report.rows.size());
  }
}

TEST_CASE("count discrepancies need an explicit choice") {
  data::DatasetManifest m;
  m.records = {{"1", "a", "x", 3}, {"2", "b", "x", 4}, {"3", "c", "x", 4}, {"4", "d", "x", 4}};
  data::rebuild_classes(m);
  const std::vector<DuplicateCluster> clusters{{{"1", "2"}}, {{"3", "4"}}};

  CHECK_THROWS_AS(resolve_count_discrepancies(clusters, {}, m), ConfigError);
  const auto ok = resolve_count_discrepancies(clusters, {{"1", "2", "2"}}, m);
  CHECK(ok.records.size() == 2);
  CHECK(ok.find("2") != nullptr);
  CHECK(ok.find("3") != nullptr);  // equal counts keep the smallest id
  CHECK_THROWS_AS(resolve_count_discrepancies(clusters, {{"1", "2", "2"}, {"2", "1", "1"}}, m), ConfigError);
  CHECK_THROWS_AS(resolve_count_discrepancies(clusters, {{"1", "2", "9"}}, m), ConfigError);
  CHECK_THROWS_AS(resolve_count_discrepancies(clusters, {{"1", "3", "1"}}, m), ConfigError);
  AuditReport report;
  resolve_count_discrepancies(clusters, {{"1", "2", "1"}, {"1", "3", "1"}}, m, &report);
  CHECK(report.count("skip") == 1);
}

TEST_CASE("class merge rules") {
  TempDir dir;
  std::ofstream(dir / "chain.csv") << "a,b\nb,c\n";
  CHECK_THROWS_AS(read_merge_file(dir / "chain.csv"), ConfigError);
  std::ofstream(dir / "twice.csv") << "a,b\na,c\n";
  CHECK_THROWS_AS(read_merge_file(dir / "twice.csv"), ConfigError);
  std::ofstream(dir / "move.csv") << "a,b\nmove,z,val\n";
  const auto mm = read_merge_file(dir / "move.csv");
  CHECK(mm.moves.at("z") == data::Split::val);

  data::DatasetManifest m;
  m.records = {{"1", "p", "q", 1, data::Split::train}};
  data::rebuild_classes(m);
  ClassMergeMap missing;
  missing.merges["nope"] = "also_nope";
  CHECK_THROWS_AS(apply_class_merges(m, missing), ConfigError);
}

TEST_CASE("reviewed curation tables are consistent") {
  const auto identical = read_cluster_file(kData / "fsc133" / "identical_sets.txt", ClusterKind::exact);
  const auto near = read_cluster_file(kData / "fsc133" / "duplicate_sets.txt", ClusterKind::near);
  auto members = [](const std::vector<DuplicateCluster>& cs) {
    std::size_t n = 0;
    for (const auto& c : cs) n += c.members.size();
    return n;
  };
  CHECK(identical.size() == 159);
  CHECK(members(identical) == 334);
  CHECK(near.size() == 211);
  CHECK(members(near) == 448);

  std::set<std::string> seen;
  for (const auto& c : near)
    for (const auto& id : c.members) CHECK(seen.insert(id).second);
  // every identical set sits inside one reviewed duplicate set
  std::map<std::string, std::size_t> owner;
  for (std::size_t i = 0; i < near.size(); ++i)
    for (const auto& id : near[i].members) owner[id] = i;
  for (const auto& c : identical) {
    REQUIRE(owner.count(c.members.front()));
    for (const auto& id : c.members) CHECK(owner[id] == owner[c.members.front()]);
  }

  const auto merges = read_merge_file(kData / "fsc133" / "merges.csv");
  CHECK(merges.merges.size() == 14);
  const auto kept = read_kept_file(kData / "fsc133" / "kept.csv");
  // kept ids must name members of the reviewed sets; an empty manifest checks only that
  data::DatasetManifest empty;
  CHECK_NOTHROW(resolve_count_discrepancies(near, kept, empty));
}
