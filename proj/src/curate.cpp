#include "cac/curate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cac/errors.hpp"

namespace cac::curate {

namespace fs = std::filesystem;
using data::DatasetManifest;
using data::ImageRecord;
using data::Split;

namespace {

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t, int)>& body) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(n, 1))));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) body(i, 0);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = next++; i < n; i = next++) body(i, w);
    });
  }
  for (auto& t : pool) t.join();
}

bool all_digits(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

struct UnionFind {
  std::vector<std::size_t> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

std::string join(const std::vector<std::string>& ids, const char* sep = ",") {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += sep;
    out += ids[i];
  }
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Strips comments and blank lines.
std::vector<std::string> content_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  return out;
}

}  // namespace

bool id_less(const std::string& a, const std::string& b) {
  const bool na = all_digits(a);
  const bool nb = all_digits(b);
  if (na && nb) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
  }
  if (na != nb) return na;
  return a < b;
}

Signature make_signature(const Image8& image, const DiffMetric& metric) {
  if (metric.resolution <= 0) throw ConfigError("curate.resolution must be positive");
  const Image8 gray = to_grayscale(resize_bilinear_aa(image, metric.resolution, metric.resolution));
  Signature s;
  s.gray = gray.pixels;
  std::array<std::uint32_t, 256> hist{};
  for (std::uint8_t v : s.gray) {
    ++hist[v];
    s.sum += v;
  }
  std::uint32_t acc = 0;
  std::array<std::uint32_t, 257> ge{};
  for (int t = 255; t >= 0; --t) {
    acc += hist[static_cast<std::size_t>(t)];
    ge[static_cast<std::size_t>(t)] = acc;
  }
  for (int k = 0; k < 64; ++k) s.tail[static_cast<std::size_t>(k)] = ge[static_cast<std::size_t>(4 * k)];
  return s;
}

std::uint64_t pixel_diff(const Signature& a, const Signature& b) {
  if (a.gray.size() != b.gray.size()) throw ShapeError("signatures built at different resolutions");
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < a.gray.size(); ++i) {
    total += static_cast<std::uint64_t>(std::abs(int(a.gray[i]) - int(b.gray[i])));
  }
  return total;
}

double pixel_diff(const Image8& a, const Image8& b, const DiffMetric& metric) {
  return static_cast<double>(pixel_diff(make_signature(a, metric), make_signature(b, metric)));
}

std::uint64_t diff_lower_bound(const Signature& a, const Signature& b) {
  std::uint64_t hist_bound = 0;
  for (std::size_t k = 1; k < 64; ++k) {
    hist_bound += static_cast<std::uint64_t>(
        std::llabs(static_cast<long long>(a.tail[k]) - static_cast<long long>(b.tail[k])));
  }
  const std::uint64_t sum_bound = a.sum > b.sum ? a.sum - b.sum : b.sum - a.sum;
  return std::max(hist_bound, sum_bound);
}

std::string to_string(ClusterKind kind) { return kind == ClusterKind::exact ? "exact" : "near"; }

namespace {

// Exits once the running total passes `limit`.
std::uint64_t bounded_diff(const Signature& a, const Signature& b, std::uint64_t limit) {
  std::uint64_t total = 0;
  const std::size_t n = a.gray.size();
  constexpr std::size_t kChunk = 1024;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    for (std::size_t i = start; i < end; ++i) {
      total += static_cast<std::uint64_t>(std::abs(int(a.gray[i]) - int(b.gray[i])));
    }
    if (total > limit) return total;
  }
  return total;
}

struct Edge {
  std::size_t a, b;
  std::uint64_t diff;
};

std::vector<DuplicateCluster> components(const std::vector<std::string>& ids,
                                         const std::vector<Signature>& sigs,
                                         const std::vector<Edge>& edges, ClusterKind kind) {
  UnionFind uf(ids.size());
  for (const auto& e : edges) uf.unite(e.a, e.b);
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < ids.size(); ++i) groups[uf.find(i)].push_back(i);
  std::vector<DuplicateCluster> out;
  for (auto& [root, members] : groups) {
    if (members.size() < 2) continue;
    DuplicateCluster c;
    c.kind = kind;
    std::uint64_t worst = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      c.members.push_back(ids[members[i]]);
      for (std::size_t j = i + 1; j < members.size(); ++j) {
        worst = std::max(worst, pixel_diff(sigs[members[i]], sigs[members[j]]));
      }
    }
    c.max_pairwise_diff = static_cast<double>(worst);
    std::sort(c.members.begin(), c.members.end(), id_less);
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const DuplicateCluster& x, const DuplicateCluster& y) {
    return id_less(x.members.front(), y.members.front());
  });
  return out;
}

}  // namespace

ClusterScan cluster_signatures(const std::vector<std::string>& ids,
                               const std::vector<Signature>& signatures,
                               const DiffMetric& metric, int threads) {
  if (ids.size() != signatures.size()) throw ShapeError("ids and signatures differ in length");
  if (!(metric.threshold_near >= 0.0)) throw ConfigError("curate.threshold must be non-negative");
  const auto limit = static_cast<std::uint64_t>(std::floor(metric.threshold_near));

  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    return signatures[x].sum != signatures[y].sum ? signatures[x].sum < signatures[y].sum : x < y;
  });

  const int workers = std::max(1, threads);
  std::vector<std::vector<Edge>> local(static_cast<std::size_t>(workers));
  std::vector<std::uint64_t> evaluated(static_cast<std::size_t>(workers), 0);
  std::vector<std::uint64_t> pruned(static_cast<std::size_t>(workers), 0);
  parallel_for(order.size(), workers, [&](std::size_t oi, int w) {
    const Signature& a = signatures[order[oi]];
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const Signature& b = signatures[order[oj]];
      if (b.sum - a.sum > limit) {
        pruned[static_cast<std::size_t>(w)] += order.size() - oj;
        break;
      }
      if (diff_lower_bound(a, b) > limit) {
        ++pruned[static_cast<std::size_t>(w)];
        continue;
      }
      ++evaluated[static_cast<std::size_t>(w)];
      const std::uint64_t d = bounded_diff(a, b, limit);
      if (d <= limit) {
        local[static_cast<std::size_t>(w)].push_back(
            {std::min(order[oi], order[oj]), std::max(order[oi], order[oj]), d});
      }
    }
  });

  std::vector<Edge> edges;
  ClusterScan scan;
  for (int w = 0; w < workers; ++w) {
    edges.insert(edges.end(), local[static_cast<std::size_t>(w)].begin(),
                 local[static_cast<std::size_t>(w)].end());
    scan.pairs_evaluated += evaluated[static_cast<std::size_t>(w)];
    scan.pairs_pruned += pruned[static_cast<std::size_t>(w)];
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return x.a != y.a ? x.a < y.a : x.b < y.b;
  });
  std::vector<Edge> zero;
  for (const auto& e : edges) {
    if (e.diff == 0) zero.push_back(e);
  }
  scan.exact = components(ids, signatures, zero, ClusterKind::exact);
  scan.near = components(ids, signatures, edges, ClusterKind::near);
  return scan;
}

ClusterScan find_duplicate_clusters(const DatasetManifest& manifest, const DiffMetric& metric,
                                    int threads) {
  const std::size_t n = manifest.records.size();
  std::vector<Signature> sigs(n);
  std::vector<char> ok(n, 0);
  parallel_for(n, threads, [&](std::size_t i, int) {
    try {
      sigs[i] = make_signature(read_image(manifest.resolve(manifest.records[i])), metric);
      ok[i] = 1;
    } catch (const Error&) {
    }
  });
  std::vector<std::string> ids;
  std::vector<Signature> kept;
  std::vector<std::string> unreadable;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      ids.push_back(manifest.records[i].id);
      kept.push_back(std::move(sigs[i]));
    } else {
      unreadable.push_back(manifest.records[i].id);
    }
  }
  ClusterScan scan = cluster_signatures(ids, kept, metric, threads);
  std::sort(unreadable.begin(), unreadable.end(), id_less);
  scan.unreadable = std::move(unreadable);
  return scan;
}

std::vector<DuplicateCluster> read_cluster_file(const fs::path& path, ClusterKind kind) {
  std::vector<DuplicateCluster> out;
  for (std::string line : content_lines(path)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    DuplicateCluster c;
    c.kind = kind;
    c.max_pairwise_diff = std::numeric_limits<double>::quiet_NaN();
    std::string id;
    while (ls >> id) c.members.push_back(id);
    if (c.members.size() < 2) throw ConfigError("cluster with fewer than 2 ids in " + path.string());
    std::sort(c.members.begin(), c.members.end(), id_less);
    out.push_back(std::move(c));
  }
  std::sort(out.begin(), out.end(), [](const DuplicateCluster& x, const DuplicateCluster& y) {
    return id_less(x.members.front(), y.members.front());
  });
  return out;
}

void write_cluster_file(const fs::path& path, const std::vector<DuplicateCluster>& clusters) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& c : clusters) out << join(c.members) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<LeakRow> audit_split_leaks(const std::vector<DuplicateCluster>& clusters,
                                       const DatasetManifest& manifest) {
  std::map<std::string, const ImageRecord*> by_id;
  for (const auto& r : manifest.records) by_id[r.id] = &r;
  std::vector<LeakRow> rows;
  for (const auto& c : clusters) {
    std::vector<const ImageRecord*> present;
    for (const auto& id : c.members) {
      auto it = by_id.find(id);
      if (it != by_id.end()) present.push_back(it->second);
    }
    std::set<Split> splits;
    for (const auto* r : present) splits.insert(r->split);
    if (splits.size() < 2) continue;
    const Split first = *splits.begin();
    const ImageRecord* rep = nullptr;
    for (const auto* r : present) {
      if (r->split == first && (!rep || id_less(r->id, rep->id))) rep = r;
    }
    for (const auto* r : present) {
      if (r->split == first) continue;
      rows.push_back({rep->id, r->id, rep->split, r->split, rep->class_name, r->class_name,
                      rep->count, r->count});
    }
  }
  return rows;
}

void ClassMergeMap::validate() const {
  for (const auto& [source, target] : merges) {
    if (source == target) throw ConfigError("class '" + source + "' merged into itself");
    if (merges.count(target)) {
      throw ConfigError("merge target '" + target + "' is itself merged (chains are not allowed)");
    }
  }
}

ClassMergeMap read_merge_file(const fs::path& path) {
  ClassMergeMap out;
  for (const auto& line : content_lines(path)) {
    const auto f = split_fields(line, ',');
    if (f.size() == 3 && f[0] == "move") {
      out.moves[f[1]] = data::parse_split(f[2]);
    } else if (f.size() == 2 && !f[0].empty() && !f[1].empty()) {
      if (!out.merges.emplace(f[0], f[1]).second) {
        throw ConfigError("class '" + f[0] + "' merged twice in " + path.string());
      }
    } else {
      throw ConfigError("malformed merge line '" + line + "' in " + path.string());
    }
  }
  out.validate();
  return out;
}

std::size_t AuditReport::count(const std::string& action) const {
  return static_cast<std::size_t>(
      std::count_if(rows.begin(), rows.end(), [&](const AuditRow& r) { return r.action == action; }));
}

void write_audit(const fs::path& path, const AuditReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : report.rows) {
    nlohmann::json j;
    j["action"] = r.action;
    j["ids"] = r.ids;
    if (std::isfinite(r.diff)) j["diff"] = r.diff;
    j["reason"] = r.reason;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

DatasetManifest apply_class_merges(const DatasetManifest& manifest, const ClassMergeMap& merges,
                                   AuditReport* report) {
  merges.validate();
  std::set<std::string> present;
  for (const auto& r : manifest.records) present.insert(r.class_name);

  std::map<std::string, std::string> active;
  for (const auto& [source, target] : merges.merges) {
    if (present.count(source)) {
      active[source] = target;
    } else if (present.count(target)) {
      if (report) report->rows.push_back({"skip", {source}, NAN, "source class absent, target '" + target + "' present"});
    } else {
      throw ConfigError("merge source class '" + source + "' not in manifest");
    }
  }
  std::map<std::string, Split> placement;
  for (const auto& [source, target] : merges.merges) placement[target] = Split::train;
  for (const auto& [cls, split] : merges.moves) {
    if (!present.count(cls) && !active.count(cls)) {
      bool is_target = false;
      for (const auto& [s, t] : active) is_target |= t == cls;
      if (!is_target) throw ConfigError("moved class '" + cls + "' not in manifest");
    }
    placement[cls] = split;
  }

  DatasetManifest out = manifest;
  for (auto& r : out.records) {
    auto m = active.find(r.class_name);
    if (m != active.end()) {
      if (report) report->rows.push_back({"relabel", {r.id}, NAN, r.class_name + " -> " + m->second});
      r.class_name = m->second;
    }
    auto p = placement.find(r.class_name);
    if (p != placement.end() && p->second != r.split) {
      if (report) {
        report->rows.push_back({"move", {r.id}, NAN,
                                data::to_string(r.split) + " -> " + data::to_string(p->second) +
                                    " (class " + r.class_name + ")"});
      }
      r.split = p->second;
    }
  }
  data::rebuild_classes(out);
  return out;
}

KeptTable read_kept_file(const fs::path& path) {
  KeptTable out;
  for (const auto& line : content_lines(path)) {
    const auto f = split_fields(line, ',');
    if (f.size() != 3 || f[0].empty() || f[1].empty() || f[2].empty()) {
      throw ConfigError("malformed kept line '" + line + "' in " + path.string());
    }
    out.push_back({f[0], f[1], f[2]});
  }
  return out;
}

DatasetManifest resolve_count_discrepancies(const std::vector<DuplicateCluster>& clusters,
                                            const KeptTable& kept, const DatasetManifest& manifest,
                                            AuditReport* report) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) index[manifest.records[i].id] = i;

  std::map<std::string, std::size_t> cluster_of;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& id : clusters[c].members) {
      auto [it, fresh] = cluster_of.emplace(id, c);
      if (!fresh && it->second != c) {
        throw ConfigError("id " + id + " belongs to more than one duplicate cluster");
      }
    }
  }
  std::map<std::size_t, std::set<std::string>> choice;
  for (const auto& e : kept) {
    auto a = cluster_of.find(e.id_a);
    auto b = cluster_of.find(e.id_b);
    if (a == cluster_of.end() || b == cluster_of.end() || a->second != b->second) {
      if (report) {
        report->rows.push_back({"skip", {e.id_a, e.id_b}, NAN, "kept entry names no duplicate cluster"});
      }
      continue;
    }
    const auto& members = clusters[a->second].members;
    if (std::find(members.begin(), members.end(), e.kept) == members.end()) {
      throw ConfigError("kept id " + e.kept + " is not a member of cluster " + join(members));
    }
    choice[a->second].insert(e.kept);
  }

  std::set<std::string> removed;
  std::vector<std::string> uncovered;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    std::vector<std::string> present;
    for (const auto& id : clusters[c].members) {
      if (index.count(id)) present.push_back(id);
    }
    if (present.size() < 2) continue;

    bool equal = true;
    for (const auto& id : present) {
      equal &= manifest.records[index[id]].count == manifest.records[index[present[0]]].count;
    }
    std::string survivor;
    auto ch = choice.find(c);
    if (ch != choice.end()) {
      if (ch->second.size() > 1) {
        throw ConfigError("conflicting kept ids for cluster " + join(clusters[c].members));
      }
      survivor = *ch->second.begin();
      if (!index.count(survivor)) {
        throw ConfigError("kept id " + survivor + " missing from manifest");
      }
    } else if (equal) {
      survivor = present.front();
    } else {
      uncovered.push_back("{" + join(present) + "}");
      continue;
    }
    if (report && !equal) {
      for (std::size_t i = 0; i < present.size(); ++i) {
        for (std::size_t j = i + 1; j < present.size(); ++j) {
          const auto ca = manifest.records[index[present[i]]].count;
          const auto cb = manifest.records[index[present[j]]].count;
          if (ca == cb) continue;
          const double abs_diff = std::fabs(static_cast<double>(ca - cb));
          std::ostringstream why;
          why << "counts " << ca << " vs " << cb << ", abs " << abs_diff << ", rel "
              << abs_diff / static_cast<double>(std::max(ca, cb)) << ", kept " << survivor;
          report->rows.push_back({"discrepancy", {present[i], present[j]}, clusters[c].max_pairwise_diff,
                                  why.str()});
        }
      }
    }
    for (const auto& id : present) {
      if (id == survivor) continue;
      removed.insert(id);
      if (report) {
        report->rows.push_back({"remove", {id, survivor}, clusters[c].max_pairwise_diff,
                                "duplicate of " + survivor + " (" + to_string(clusters[c].kind) + ")"});
      }
    }
  }
  if (!uncovered.empty()) {
    std::string list;
    for (const auto& u : uncovered) list += (list.empty() ? "" : ", ") + u;
    throw ConfigError("count-discrepant clusters without a kept entry: " + list);
  }
  DatasetManifest out = manifest;
  std::erase_if(out.records, [&](const ImageRecord& r) { return removed.count(r.id) > 0; });
  data::rebuild_classes(out);
  return out;
}

BuildResult build_fsc133(const DatasetManifest& fsc147, const ClassMergeMap& merges,
                         const KeptTable& kept, const std::vector<DuplicateCluster>& clusters) {
  BuildResult result;
  result.leaks = audit_split_leaks(clusters, fsc147);
  for (const auto& l : result.leaks) {
    result.report.rows.push_back({"leak", {l.id_a, l.id_b}, NAN,
                                  data::to_string(l.split_a) + "/" + data::to_string(l.split_b) +
                                      " (" + l.class_a + " " + std::to_string(l.count_a) + ", " +
                                      l.class_b + " " + std::to_string(l.count_b) + ")"});
  }
  DatasetManifest deduped = resolve_count_discrepancies(clusters, kept, fsc147, &result.report);
  result.manifest = apply_class_merges(deduped, merges, &result.report);
  result.manifest.provenance = data::Provenance::fsc133;
  return result;
}

}  // namespace cac::curate
