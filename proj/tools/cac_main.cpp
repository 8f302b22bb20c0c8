// Command-line entry point: curate, train, eval, infer, localize, visualize, synth.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cac/config.hpp"
#include "cac/curate.hpp"
#include "cac/data.hpp"
#include "cac/errors.hpp"
#include "cac/eval.hpp"
#include "cac/localize.hpp"
#include "cac/train.hpp"
#include "cac/viz.hpp"

namespace fs = std::filesystem;
using namespace cac;

namespace {

struct Common {
  std::string config_file;
  std::vector<std::string> sets;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_file, "key=value config file");
  sub->add_option("--set", c.sets, "override one key (key=value), repeatable");
}

RunConfig resolve(const Common& c, char** envp,
                  const std::vector<std::pair<std::string, std::string>>& flags) {
  RunConfig cfg = RunConfig::defaults();
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  cfg.apply_env(envp);
  for (const auto& s : c.sets) cfg.set_assignment(s);
  for (const auto& [k, v] : flags) cfg.set(k, v);
  std::cerr << "config_hash=" << cfg.hash() << '\n';
  return cfg;
}

void prepare_out_dir(const fs::path& dir, bool force, bool allow_existing = false) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force && !allow_existing) {
    throw UsageError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  fs::create_directories(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

data::DatasetManifest load_data(const std::string& path, const std::string& kind) {
  return data::load_manifest(path, data::parse_dataset_kind(kind));
}

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return 2;
    case ErrorCategory::validation: return 3;
    case ErrorCategory::runtime: return 1;
  }
  return 1;
}

nlohmann::json split_summary(const data::DatasetManifest& m) {
  nlohmann::json j;
  j["records"] = m.records.size();
  std::size_t classes = 0;
  for (data::Split s : data::kSplits) {
    j["images"][data::to_string(s)] = m.split(s).size();
    j["classes"][data::to_string(s)] = m.classes.count(s) ? m.classes.at(s).size() : 0;
    classes += m.classes.count(s) ? m.classes.at(s).size() : 0;
  }
  j["classes_total"] = classes;
  return j;
}

}  // namespace

int main(int argc, char** argv, char** envp) {
  CLI::App app{"Exemplar-free object counting: data curation, training and evaluation"};
  app.require_subcommand(1);

  // curate
  Common curate_c;
  std::string cu_in, cu_kind = "fsc147", cu_out, cu_merges, cu_kept, cu_clusters, cu_sets;
  std::optional<double> cu_threshold;
  std::optional<int> cu_threads;
  bool cu_force = false;
  auto* curate_cmd = app.add_subcommand("curate", "build the curated manifest from an FSC-147 root");
  add_common(curate_cmd, curate_c);
  curate_cmd->add_option("--in", cu_in, "dataset root or manifest")->required();
  curate_cmd->add_option("--kind", cu_kind, "fsc147 | manifest");
  curate_cmd->add_option("--merges", cu_merges, "class merge file");
  curate_cmd->add_option("--kept", cu_kept, "kept-id table");
  curate_cmd->add_option("--threshold", cu_threshold, "near-duplicate threshold");
  curate_cmd->add_option("--clusters", cu_clusters, "reviewed | computed");
  curate_cmd->add_option("--duplicate-sets", cu_sets, "reviewed duplicate sets file");
  curate_cmd->add_option("--threads", cu_threads, "pair-scan worker threads");
  curate_cmd->add_option("--out", cu_out, "output directory")->required();
  curate_cmd->add_flag("--force", cu_force, "overwrite a non-empty output directory");

  // train
  Common train_c;
  std::string tr_data, tr_kind = "manifest", tr_out;
  bool tr_resume = false, tr_force = false;
  auto* train_cmd = app.add_subcommand("train", "train the counting model");
  add_common(train_cmd, train_c);
  train_cmd->add_option("--data", tr_data, "manifest file/directory or dataset root")->required();
  train_cmd->add_option("--kind", tr_kind, "manifest | fsc147 | carpk");
  train_cmd->add_option("--out", tr_out, "run directory")->required();
  train_cmd->add_flag("--resume", tr_resume, "continue from <out>/final.safetensors");
  train_cmd->add_flag("--force", tr_force, "overwrite a non-empty run directory");

  // eval
  Common eval_c;
  std::string ev_data, ev_kind = "manifest", ev_split, ev_baseline = "none", ev_ckpt, ev_report, ev_preds;
  std::optional<double> ev_limit;
  auto* eval_cmd = app.add_subcommand("eval", "score a checkpoint or a trivial baseline");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--data", ev_data, "manifest file/directory or dataset root")->required();
  eval_cmd->add_option("--kind", ev_kind, "manifest | fsc147 | carpk");
  eval_cmd->add_option("--split", ev_split, "val | test")->required();
  eval_cmd->add_option("--limit", ev_limit, "drop images whose count exceeds this");
  eval_cmd->add_option("--baseline", ev_baseline, "mean | median | none");
  eval_cmd->add_option("--checkpoint", ev_ckpt, "model checkpoint");
  eval_cmd->add_option("--report", ev_report, "write a JSON report here");
  eval_cmd->add_option("--predictions", ev_preds, "write per-image predictions (CSV) here");

  // infer
  Common infer_c;
  std::string in_ckpt, in_image, in_localizer, in_density;
  int in_grid = 1;
  auto* infer_cmd = app.add_subcommand("infer", "count the objects in one image");
  add_common(infer_cmd, infer_c);
  infer_cmd->add_option("--checkpoint", in_ckpt, "model checkpoint")->required();
  infer_cmd->add_option("--image", in_image, "image file")->required();
  infer_cmd->add_option("--split-grid", in_grid, "count n x n sub-images and sum")->check(CLI::PositiveNumber);
  infer_cmd->add_option("--localizer", in_localizer, "localization head checkpoint");
  infer_cmd->add_option("--density", in_density, "write the density map (PNG) here");

  // localize
  Common loc_c;
  std::string lo_ckpt, lo_data, lo_kind = "manifest", lo_out;
  bool lo_force = false;
  auto* loc_cmd = app.add_subcommand("localize", "train a localization head on frozen features");
  add_common(loc_cmd, loc_c);
  loc_cmd->add_option("--checkpoint", lo_ckpt, "trained counting checkpoint")->required();
  loc_cmd->add_option("--data", lo_data, "manifest with point annotations")->required();
  loc_cmd->add_option("--kind", lo_kind, "manifest | fsc147");
  loc_cmd->add_option("--out", lo_out, "output directory")->required();
  loc_cmd->add_flag("--force", lo_force, "overwrite a non-empty output directory");

  // visualize
  Common viz_c;
  std::string vi_ckpt, vi_out, vi_weighting;
  std::vector<std::string> vi_images;
  std::vector<double> vi_counts;
  bool vi_force = false;
  auto* viz_cmd = app.add_subcommand("visualize", "render SVD saliency panels");
  add_common(viz_cmd, viz_c);
  viz_cmd->add_option("--checkpoint", vi_ckpt, "projection-head checkpoint")->required();
  viz_cmd->add_option("--images", vi_images, "image files")->required();
  viz_cmd->add_option("--counts", vi_counts, "ground-truth counts aligned with --images");
  viz_cmd->add_option("--weighting", vi_weighting, "elementwise | column_norm");
  viz_cmd->add_option("--out", vi_out, "output directory")->required();
  viz_cmd->add_flag("--force", vi_force, "overwrite a non-empty output directory");

  // synth
  Common synth_c;
  std::string sy_out;
  std::optional<int> sy_n;
  std::optional<std::uint64_t> sy_seed;
  bool sy_force = false;
  auto* synth_cmd = app.add_subcommand("synth", "generate the synthetic dot dataset");
  add_common(synth_cmd, synth_c);
  synth_cmd->add_option("--out", sy_out, "output directory")->required();
  synth_cmd->add_option("--n", sy_n, "number of images");
  synth_cmd->add_option("--seed", sy_seed, "generator seed");
  synth_cmd->add_flag("--force", sy_force, "overwrite a non-empty output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*curate_cmd) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (!cu_merges.empty()) flags.emplace_back("curate.merges", cu_merges);
      if (!cu_kept.empty()) flags.emplace_back("curate.kept", cu_kept);
      if (cu_threshold) flags.emplace_back("curate.threshold", std::to_string(*cu_threshold));
      if (!cu_clusters.empty()) flags.emplace_back("curate.clusters", cu_clusters);
      if (!cu_sets.empty()) flags.emplace_back("curate.duplicate_sets", cu_sets);
      if (cu_threads) flags.emplace_back("curate.threads", std::to_string(*cu_threads));
      const RunConfig cfg = resolve(curate_c, envp, flags);
      const auto metric = diff_metric(cfg);
      const auto merges = curate::read_merge_file(cfg.get("curate.merges"));
      const auto kept = curate::read_kept_file(cfg.get("curate.kept"));
      const auto source = data::load_manifest(cu_in, data::parse_dataset_kind(cu_kind));
      const fs::path out = cu_out;
      prepare_out_dir(out, cu_force);
      write_text(out / "config.txt", cfg.dump());

      std::vector<curate::DuplicateCluster> clusters;
      const std::string mode = cfg.get("curate.clusters");
      if (mode == "reviewed") {
        clusters = curate::read_cluster_file(cfg.get("curate.duplicate_sets"), curate::ClusterKind::near);
      } else if (mode == "computed") {
        const auto scan = curate::find_duplicate_clusters(source, metric, cfg.get_int("curate.threads"));
        curate::write_cluster_file(out / "clusters_exact.txt", scan.exact);
        curate::write_cluster_file(out / "clusters_near.txt", scan.near);
        if (!scan.unreadable.empty()) {
          std::string list;
          for (const auto& id : scan.unreadable) list += id + "\n";
          write_text(out / "unreadable.txt", list);
        }
        std::cerr << "pairs evaluated=" << scan.pairs_evaluated << " pruned=" << scan.pairs_pruned
                  << " exact clusters=" << scan.exact.size() << " near clusters=" << scan.near.size()
                  << '\n';
        clusters = scan.near;
      } else {
        throw ConfigError("curate.clusters must be reviewed or computed");
      }
      auto built = curate::build_fsc133(source, merges, kept, clusters);
      built.manifest.root = source.root;
      data::write_manifest(out / "manifest.json", built.manifest);
      curate::write_audit(out / "audit.jsonl", built.report);
      std::string leaks = "id_a,split_a,class_a,count_a,id_b,split_b,class_b,count_b\n";
      for (const auto& l : built.leaks) {
        leaks += l.id_a + "," + data::to_string(l.split_a) + "," + l.class_a + "," + std::to_string(l.count_a) +
                 "," + l.id_b + "," + data::to_string(l.split_b) + "," + l.class_b + "," +
                 std::to_string(l.count_b) + "\n";
      }
      write_text(out / "leaks.csv", leaks);
      nlohmann::json summary = split_summary(built.manifest);
      summary["removed"] = built.report.count("remove");
      summary["relabelled"] = built.report.count("relabel");
      summary["moved"] = built.report.count("move");
      summary["leak_rows"] = built.leaks.size();
      summary["config_hash"] = cfg.hash();
      write_text(out / "summary.json", summary.dump(2) + "\n");
      std::cout << summary.dump() << '\n';
    } else if (*train_cmd) {
      const RunConfig cfg = resolve(train_c, envp, {});
      const auto tc = train_config(cfg);
      const auto manifest = load_data(tr_data, tr_kind);
      const fs::path out = tr_out;
      std::optional<train::Checkpoint> resume;
      if (tr_resume) {
        resume = train::load_checkpoint(out / "final.safetensors");
      }
      prepare_out_dir(out, tr_force, tr_resume);
      write_text(out / "config.txt", cfg.dump());
      const auto result = train::train_counter(manifest, tc, out, resume);
      const auto& model = result.checkpoint.model;
      nlohmann::json report;
      report["config_hash"] = cfg.hash();
      report["epochs"] = result.checkpoint.epoch;
      report["steps"] = result.log.size();
      if (!manifest.split(data::Split::val).empty()) {
        const auto ev = train::evaluate_checkpoint(model, manifest, data::Split::val, std::nullopt,
                                                   out / "val_predictions.csv");
        report["val"] = {{"mae", ev.result.mae}, {"rmse", ev.result.rmse}, {"n", ev.result.n_images}};
        std::cout << "val mae=" << fmt2(ev.result.mae) << " rmse=" << fmt2(ev.result.rmse) << '\n';
      }
      write_text(out / "eval.json", report.dump(2) + "\n");
    } else if (*eval_cmd) {
      const RunConfig cfg = resolve(eval_c, envp, {});
      const auto manifest = load_data(ev_data, ev_kind);
      const data::Split split = data::parse_split(ev_split);
      nlohmann::json report;
      report["config_hash"] = cfg.hash();
      report["split"] = ev_split;
      eval::EvalResult r;
      if (ev_baseline != "none") {
        const auto kind = eval::parse_baseline(ev_baseline);
        const auto [mean, median] = eval::trivial_baselines(manifest.counts(data::Split::train));
        const double value = kind == eval::BaselineKind::mean ? mean.value : median.value;
        const auto gts = manifest.counts(split);
        if (gts.empty()) throw UsageError("split " + ev_split + " is empty");
        r = eval::density_limited_eval(std::vector<double>(gts.size(), value), gts, ev_limit);
        report["baseline"] = {{"kind", ev_baseline}, {"value", value}};
        std::cout << "baseline=" << ev_baseline << " value=" << value << '\n';
        if (!ev_preds.empty()) {
          std::string csv = "id,count,predicted\n";
          for (const auto* rec : manifest.split(split)) {
            csv += rec->id + "," + std::to_string(rec->count) + "," + std::to_string(value) + "\n";
          }
          write_text(ev_preds, csv);
        }
      } else {
        if (ev_ckpt.empty()) throw UsageError("eval needs --checkpoint or --baseline mean|median");
        const auto ck = train::load_checkpoint(ev_ckpt);
        std::optional<fs::path> preds;
        if (!ev_preds.empty()) preds = ev_preds;
        r = train::evaluate_checkpoint(ck.model, manifest, split, ev_limit, preds).result;
        report["checkpoint"] = ev_ckpt;
      }
      report["mae"] = r.mae;
      report["rmse"] = r.rmse;
      report["n_images"] = r.n_images;
      report["excluded"] = r.n_excluded;
      report["excluded_percent"] = r.excluded_percent;
      if (r.limit) report["limit"] = *r.limit;
      std::cout << "split=" << ev_split << " mae=" << fmt2(r.mae) << " rmse=" << fmt2(r.rmse)
                << " n=" << r.n_images << " excluded=" << r.n_excluded << " ("
                << fmt2(r.excluded_percent) << "%)\n";
      if (!ev_report.empty()) write_text(ev_report, report.dump(2) + "\n");
    } else if (*infer_cmd) {
      const RunConfig cfg = resolve(infer_c, envp, {});
      const auto ck = train::load_checkpoint(in_ckpt);
      const auto& model = ck.model;
      const Image8 image = read_image(in_image);
      const auto& bc = model.backbone.config;
      const eval::Prepare prepare = [&](const Image8& img) {
        return data::preprocess(img, bc.image_size, bc.normalization);
      };
      const eval::Counter counter = [&](const ImageTensor& t) { return model.predict(t); };
      const double count = eval::split_count_inference(counter, prepare, image, in_grid);
      std::printf("%.4f\n", count);
      if (!in_density.empty()) {
        if (in_localizer.empty()) throw UsageError("--density needs --localizer");
        const auto head = localize::load_localizer(in_localizer);
        const auto map = localize::localize(extract_features(prepare(image), model.backbone), head);
        write_png(in_density, viz::map_to_image(map.values));
        std::cerr << "density_integral=" << map.total() << '\n';
      }
    } else if (*loc_cmd) {
      const RunConfig cfg = resolve(loc_c, envp, {});
      const auto lc = localizer_config(cfg);
      const auto ck = train::load_checkpoint(lo_ckpt);
      const auto manifest = load_data(lo_data, lo_kind);
      const fs::path out = lo_out;
      prepare_out_dir(out, lo_force);
      write_text(out / "config.txt", cfg.dump());
      localize::LocalizationHead head(ck.model.backbone.config.model_dim, localizer_channels(cfg));
      Rng rng(lc.seed);
      head.init(rng);
      const auto r = localize::train_localizer(manifest, ck.model.backbone, head, lc);
      localize::save_localizer(out / "localizer.safetensors", head, cfg.hash());
      nlohmann::json report;
      report["config_hash"] = cfg.hash();
      report["epoch_losses"] = r.epoch_losses;
      report["heldout_before"] = r.heldout_before;
      report["heldout_after"] = r.heldout_after;
      report["backbone_unchanged"] = r.backbone_checksum_before == r.backbone_checksum_after;
      write_text(out / "report.json", report.dump(2) + "\n");
      std::cout << "heldout loss " << r.heldout_before << " -> " << r.heldout_after << '\n';
    } else if (*viz_cmd) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (!vi_weighting.empty()) flags.emplace_back("viz.weighting", vi_weighting);
      const RunConfig cfg = resolve(viz_c, envp, flags);
      if (!vi_counts.empty() && vi_counts.size() != vi_images.size()) {
        throw UsageError("--counts must align with --images");
      }
      const auto weighting = viz::parse_weighting(cfg.get("viz.weighting"));
      const auto ck = train::load_checkpoint(vi_ckpt);
      const auto& bc = ck.model.backbone.config;
      std::vector<Image8> images;
      std::vector<Matrix> maps;
      std::vector<double> counts, preds;
      for (std::size_t i = 0; i < vi_images.size(); ++i) {
        images.push_back(read_image(vi_images[i]));
        const auto feats = extract_features(data::preprocess(images.back(), bc.image_size, bc.normalization),
                                            ck.model.backbone);
        maps.push_back(viz::svd_saliency(feats, ck.model.head, weighting).values);
        preds.push_back(predict_count(feats, ck.model.head).count);
        counts.push_back(vi_counts.empty() ? NAN : vi_counts[i]);
      }
      const fs::path out = vi_out;
      prepare_out_dir(out, vi_force);
      viz::ReportOptions opts;
      opts.columns = cfg.get_int("viz.columns");
      for (const auto& f : viz::render_report(images, maps, counts, preds, out, opts)) {
        std::cout << f.string() << '\n';
      }
    } else if (*synth_cmd) {
      std::vector<std::pair<std::string, std::string>> flags;
      if (sy_n) flags.emplace_back("synth.n_images", std::to_string(*sy_n));
      if (sy_seed) flags.emplace_back("synth.seed", std::to_string(*sy_seed));
      const RunConfig cfg = resolve(synth_c, envp, flags);
      const fs::path out = sy_out;
      prepare_out_dir(out, sy_force);
      const auto m = data::generate_dot_dataset(out, synthetic_config(cfg));
      std::cout << split_summary(m).dump() << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error[" << e.kind() << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[runtime]: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
