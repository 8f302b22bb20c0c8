#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cac/data.hpp"
#include "cac/image.hpp"

namespace cac::curate {

/// Pixel difference used to find duplicate images: both images go through the
/// shared antialiased resize to `resolution`, are converted to 8-bit luma, and
/// the absolute differences are summed.
struct DiffMetric {
  int resolution = 224;
  double threshold_near = 9400.0;
  static constexpr double threshold_zero = 0.0;
};

/// Everything the pair scan needs from one image.
struct Signature {
  std::vector<std::uint8_t> gray;  // resolution^2 bytes
  std::uint64_t sum = 0;
  std::array<std::uint32_t, 64> tail{};  // tail[k] = #pixels >= 4k, k = 0..63
};

Signature make_signature(const Image8& image, const DiffMetric& metric);

/// Exact metric on two prepared signatures.
std::uint64_t pixel_diff(const Signature& a, const Signature& b);
double pixel_diff(const Image8& a, const Image8& b, const DiffMetric& metric = {});

/// Lower bound on pixel_diff(a, b); the scan only evaluates pairs whose bound
/// does not exceed the threshold.
std::uint64_t diff_lower_bound(const Signature& a, const Signature& b);

enum class ClusterKind { exact, near };
std::string to_string(ClusterKind kind);

struct DuplicateCluster {
  std::vector<std::string> members;  // numeric-aware ascending
  double max_pairwise_diff = 0.0;    // NaN when unknown (clusters read from file)
  ClusterKind kind = ClusterKind::exact;
};

/// Numeric ids compare as numbers, others lexicographically after them.
bool id_less(const std::string& a, const std::string& b);

struct ClusterScan {
  std::vector<DuplicateCluster> exact;  // components of the diff == 0 graph
  std::vector<DuplicateCluster> near;   // components of the diff <= threshold graph
  std::vector<std::string> unreadable;  // ids that failed to load
  std::uint64_t pairs_evaluated = 0;
  std::uint64_t pairs_pruned = 0;
};

/// Clusters over prepared signatures, keyed by id.
ClusterScan cluster_signatures(const std::vector<std::string>& ids,
                               const std::vector<Signature>& signatures,
                               const DiffMetric& metric, int threads = 1);

ClusterScan find_duplicate_clusters(const data::DatasetManifest& manifest,
                                    const DiffMetric& metric, int threads = 1);

/// One reviewed set per line, ids separated by commas or whitespace;
/// '#' starts a comment.
std::vector<DuplicateCluster> read_cluster_file(const std::filesystem::path& path,
                                                ClusterKind kind);
void write_cluster_file(const std::filesystem::path& path,
                        const std::vector<DuplicateCluster>& clusters);

struct LeakRow {
  std::string id_a;  // representative member of the earliest split present
  std::string id_b;  // member in a later split
  data::Split split_a = data::Split::train;
  data::Split split_b = data::Split::val;
  std::string class_a, class_b;
  std::int64_t count_a = 0, count_b = 0;
};

/// One row per (representative, other-split member) pair of every cluster
/// spanning two or more splits.
std::vector<LeakRow> audit_split_leaks(const std::vector<DuplicateCluster>& clusters,
                                       const data::DatasetManifest& manifest);

struct ClassMergeMap {
  std::map<std::string, std::string> merges;  // source -> target
  std::map<std::string, data::Split> moves;   // extra split overrides

  void validate() const;
};

/// Lines "source,target" or "move,class,split"; '#' starts a comment.
ClassMergeMap read_merge_file(const std::filesystem::path& path);

struct AuditRow {
  std::string action;  // remove | relabel | move | leak | discrepancy | skip
  std::vector<std::string> ids;
  double diff = 0.0;
  std::string reason;
};

struct AuditReport {
  std::vector<AuditRow> rows;
  std::size_t count(const std::string& action) const;
};

void write_audit(const std::filesystem::path& path, const AuditReport& report);

/// Relabels sources to their targets and forces merge targets (and any moved
/// class) into the train split. Sources absent from a manifest that already
/// holds their target are skipped, which keeps the stage idempotent.
data::DatasetManifest apply_class_merges(const data::DatasetManifest& manifest,
                                         const ClassMergeMap& merges,
                                         AuditReport* report = nullptr);

struct KeptEntry {
  std::string id_a, id_b, kept;
};
using KeptTable = std::vector<KeptEntry>;

/// Lines "member_a,member_b,kept".
KeptTable read_kept_file(const std::filesystem::path& path);

/// Leaves one record per cluster. The survivor is the kept id when the table
/// names one, otherwise the smallest id, which is only allowed when every
/// member carries the same count. Table entries whose two ids share no
/// cluster are skipped and logged.
data::DatasetManifest resolve_count_discrepancies(const std::vector<DuplicateCluster>& clusters,
                                                  const KeptTable& kept,
                                                  const data::DatasetManifest& manifest,
                                                  AuditReport* report = nullptr);

struct BuildResult {
  data::DatasetManifest manifest;
  AuditReport report;
  std::vector<LeakRow> leaks;
};

/// clusters -> leak audit -> deduplication -> class merges. Clusters name ids;
/// ids absent from the manifest are ignored.
BuildResult build_fsc133(const data::DatasetManifest& fsc147, const ClassMergeMap& merges,
                         const KeptTable& kept, const std::vector<DuplicateCluster>& clusters);

}  // namespace cac::curate
