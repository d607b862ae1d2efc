#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hapt3d/checkpoint.hpp"
#include "hapt3d/config.hpp"
#include "hapt3d/instances.hpp"
#include "hapt3d/metrics.hpp"
#include "hapt3d/orchard.hpp"
#include "hapt3d/ply.hpp"
#include "hapt3d/train.hpp"

namespace hapt3d::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

inline constexpr const char* kManifestName = "manifest.txt";

inline std::string tile_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "tile_%04zu.ply", i);
  return buf;
}

// PLY files directly inside `dir`, sorted by name. A file path is returned as is.
inline std::vector<fs::path> list_ply(const fs::path& dir) {
  if (fs::is_regular_file(dir)) return {dir};
  if (!fs::is_directory(dir)) throw ValidationError("not a directory or PLY file: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".ply") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<LabeledCloud> load_clouds(const fs::path& dir, ValidationMode mode = ValidationMode::kGroundTruth) {
  std::vector<LabeledCloud> out;
  for (const auto& p : list_ply(dir)) out.push_back(load_ply(p, mode));
  return out;
}

inline std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string history_line(const EpochRecord& r) {
  std::string s = "epoch=" + std::to_string(r.epoch) + " loss=" + number(r.loss.total) + " sem=" +
                  number(r.loss.sem) + " tree=" + number(r.loss.tree) + " ins=" + number(r.loss.ins);
  if (r.eval) {
    s += " miou=" + number(r.eval->miou) + " pq=" + number(r.eval->pq) + " pq_t=" + number(r.eval->pq_t) +
         " mpq=" + number(r.eval->mpq);
  }
  return s;
}

// ---- gen ----

struct GenOptions {
  fs::path out;
  std::size_t tiles = 0;
  std::uint64_t seed = 0;
  bool force = false;
};

inline int cmd_gen(const RunConfig& cfg, const GenOptions& o, std::ostream& log) {
  cfg.orchard.validate();
  if (fs::exists(o.out)) {
    if (!fs::is_directory(o.out)) throw ValidationError(o.out.string() + " exists and is not a directory");
    if (!fs::is_empty(o.out)) {
      if (!o.force) throw ValidationError(o.out.string() + " is not empty (use --force to overwrite)");
      for (const auto& e : fs::directory_iterator(o.out)) {
        const std::string name = e.path().filename().string();
        if (name == kManifestName || (name.rfind("tile_", 0) == 0 && e.path().extension() == ".ply")) {
          fs::remove(e.path());
        }
      }
    }
  }
  fs::create_directories(o.out);
  std::ofstream manifest(o.out / kManifestName, std::ios::binary);
  if (!manifest) throw IoError("cannot write " + (o.out / kManifestName).string());
  double fruits = 0.0, trunks = 0.0;
  for (std::size_t i = 0; i < o.tiles; ++i) {
    OrchardConfig oc = cfg.orchard;
    oc.rng_seed = tile_seed(o.seed, i);
    const LabeledCloud cloud = generate_orchard(oc);
    save_ply(cloud, o.out / tile_name(i));
    const TileStats st = tile_stats(cloud);
    manifest << "tile=" << tile_name(i) << " points=" << st.points << " fruits=" << st.fruits
             << " trunks=" << st.trunks << " fruits_per_tree=" << number(st.fruits_per_tree()) << "\n";
    fruits += static_cast<double>(st.fruits);
    trunks += static_cast<double>(st.trunks);
  }
  if (!manifest) throw IoError("failed writing the manifest");
  log << "wrote " << o.tiles << " tiles to " << o.out.string();
  if (trunks > 0) log << " (mean fruits/tree " << number(fruits / trunks) << ")";
  log << "\n";
  return kExitOk;
}

// ---- train ----

struct TrainOptions {
  fs::path data, val, out, history;
};

inline int cmd_train(const RunConfig& cfg, const TrainOptions& o, std::ostream& log) {
  cfg.validate();
  const auto train_clouds = load_clouds(o.data);
  if (train_clouds.empty()) throw ValidationError("no PLY tiles in " + o.data.string());
  const std::vector<LabeledCloud> val_clouds = o.val.empty() ? std::vector<LabeledCloud>{} : load_clouds(o.val);
  const fs::path history = o.history.empty() ? fs::path(o.out.string() + ".history") : o.history;
  std::ofstream hist(history, std::ios::app);
  if (!hist) throw IoError("cannot open history file " + history.string());
  TrainResult res = train(train_clouds, val_clouds, cfg.train, [&](const EpochRecord& r) {
    const std::string line = history_line(r);
    hist << line << "\n" << std::flush;
    log << line << "\n" << std::flush;
  });
  save_checkpoint(*res.network, o.out);
  if (res.diverged) {
    log << "training diverged: " << res.error << "; kept the last good parameters in " << o.out.string() << "\n";
    return kExitRuntime;
  }
  log << "saved " << o.out.string() << " (epoch " << res.best_epoch << ")\n";
  return kExitOk;
}

// ---- predict ----

struct PredictOptions {
  fs::path ckpt, in, out;
};

inline void predict_file(Network& net, const RunConfig& cfg, const fs::path& in, const fs::path& out) {
  const LabeledCloud cloud = load_ply(in, ValidationMode::kPrediction);
  const InstancePrediction pred = predict(net, cloud, cfg.train.tree_cluster, cfg.train.instance_cluster);
  save_ply(to_labeled_cloud(cloud, pred), out, ValidationMode::kPrediction);
}

inline int cmd_predict(const RunConfig& cfg, const PredictOptions& o, std::ostream& log) {
  cfg.train.tree_cluster.validate();
  cfg.train.instance_cluster.validate();
  auto net = load_checkpoint(o.ckpt);
  if (fs::is_directory(o.in)) {
    fs::create_directories(o.out);
    for (const auto& p : list_ply(o.in)) {
      predict_file(*net, cfg, p, o.out / p.filename());
      log << "predicted " << p.filename().string() << "\n";
    }
  } else {
    if (!fs::exists(o.in)) throw ValidationError("input not found: " + o.in.string());
    predict_file(*net, cfg, o.in, o.out);
    log << "predicted " << o.in.filename().string() << "\n";
  }
  return kExitOk;
}

// ---- eval ----

struct EvalOptions {
  fs::path pred, gt, out;
};

inline PanopticReport evaluate_dirs(const fs::path& pred, const fs::path& gt) {
  PanopticAccumulator acc;
  const auto gt_files = list_ply(gt);
  if (gt_files.empty()) throw ValidationError("no PLY files in " + gt.string());
  const bool single = fs::is_regular_file(pred);
  if (single && gt_files.size() != 1) throw ValidationError("--pred is a file but --gt holds several tiles");
  for (const auto& g : gt_files) {
    const fs::path p = single ? pred : pred / g.filename();
    if (!fs::exists(p)) throw ValidationError("missing prediction for " + g.filename().string());
    const LabeledCloud gc = load_ply(g, ValidationMode::kGroundTruth);
    const LabeledCloud pc = load_ply(p, ValidationMode::kPrediction);
    if (gc.size() != pc.size()) throw ValidationError(g.filename().string() + ": point counts differ");
    acc.add(from_labeled_cloud(pc), gc);
  }
  return acc.report();
}

inline int cmd_eval(const EvalOptions& o, std::ostream& log) {
  const PanopticReport r = evaluate_dirs(o.pred, o.gt);
  log << r.table();
  const fs::path out = !o.out.empty()           ? o.out
                       : fs::is_directory(o.pred) ? o.pred / "metrics.kv"
                                                  : fs::path(o.pred.string() + ".metrics.kv");
  std::ofstream f(out, std::ios::binary);
  if (!f) throw IoError("cannot write " + out.string());
  f << r.key_values();
  log << "wrote " << out.string() << "\n";
  return kExitOk;
}

// ---- ablate ----

struct AblateOptions {
  fs::path data, val, out;
};

inline int cmd_ablate(const RunConfig& cfg, const AblateOptions& o, std::ostream& log) {
  cfg.validate();
  const auto train_clouds = load_clouds(o.data);
  const auto val_clouds = load_clouds(o.val);
  if (train_clouds.empty() || val_clouds.empty()) throw ValidationError("ablation needs training and validation tiles");
  fs::create_directories(o.out);
  std::ofstream hist(o.out / "history.txt", std::ios::app);
  const auto rows = ablate(train_clouds, val_clouds, cfg.train, [&](SkipScheme s, const EpochRecord& r) {
    const std::string line = std::string("row=") + scheme_letter(s) + " " + history_line(r);
    hist << line << "\n" << std::flush;
    log << line << "\n" << std::flush;
  });
  const std::string table = ablation_table(rows);
  log << table;
  std::ofstream t(o.out / "ablation.txt", std::ios::binary);
  t << table;
  std::ofstream kv(o.out / "ablation.kv", std::ios::binary);
  for (const auto& r : rows) {
    const std::string k = std::string("row.") + scheme_letter(r.scheme) + ".";
    kv << k << "miou=" << number(r.report.miou) << "\n"
       << k << "pq=" << number(r.report.pq) << "\n"
       << k << "pq_t=" << number(r.report.pq_t) << "\n"
       << k << "mpq=" << number(r.report.mpq) << "\n";
  }
  if (!t || !kv) throw IoError("failed writing the ablation report to " + o.out.string());
  return kExitOk;
}

// ---- entry point ----

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Hierarchical panoptic segmentation of orchard point clouds"};
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> sets;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override one config key (key=value); repeatable, last one wins");
  };

  GenOptions gen;
  std::optional<std::uint64_t> seed;
  auto* g = app.add_subcommand("gen", "generate synthetic orchard tiles and a manifest");
  g->alias("hops-gen");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--tiles", gen.tiles, "number of tiles")->required();
  g->add_option("--seed", gen.seed, "dataset seed");
  g->add_flag("--force", gen.force, "overwrite tiles in a non-empty directory");
  common(g);

  TrainOptions tr;
  std::string scheme;
  std::optional<int> epochs;
  auto* t = app.add_subcommand("train", "train a network and write a checkpoint");
  t->add_option("--data", tr.data, "training tile directory");
  t->add_option("--val", tr.val, "validation tile directory");
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--history", tr.history, "metric history file (default: <out>.history)");
  t->add_option("--scheme", scheme, "skip scheme: A|B|C|D or None|Decoder|Encoder|EncoderDecoder");
  t->add_option("--seed", seed, "training seed");
  t->add_option("--epochs", epochs, "number of epochs");
  common(t);

  PredictOptions pr;
  auto* p = app.add_subcommand("predict", "run inference and write prediction PLY files");
  p->add_option("--ckpt", pr.ckpt, "checkpoint")->required()->check(CLI::ExistingFile);
  p->add_option("--in", pr.in, "input PLY file or directory")->required();
  p->add_option("--out", pr.out, "output PLY file or directory")->required();
  common(p);

  EvalOptions ev;
  auto* e = app.add_subcommand("eval", "score predictions against ground truth");
  e->add_option("--pred", ev.pred, "prediction PLY file or directory")->required();
  e->add_option("--gt", ev.gt, "ground-truth PLY file or directory")->required();
  e->add_option("--out", ev.out, "key=value report path (default: <pred>/metrics.kv)");

  AblateOptions ab;
  auto* a = app.add_subcommand("ablate", "train and score all four skip schemes");
  a->add_option("--data", ab.data, "training tile directory");
  a->add_option("--val", ab.val, "validation tile directory");
  a->add_option("--out", ab.out, "report directory")->required();
  a->add_option("--seed", seed, "training seed");
  a->add_option("--epochs", epochs, "number of epochs");
  common(a);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    RunConfig cfg;
    if (!config_file.empty()) cfg.apply(read_key_values(config_file));
    for (const auto& s : sets) cfg.apply_override(s);
    if (seed) cfg.train.seed = *seed;
    if (epochs) cfg.train.epochs = *epochs;
    if (!scheme.empty()) cfg.train.network.skip_scheme = parse_scheme(scheme);
    auto dir_or = [](const fs::path& flag, const std::string& fallback, const char* what) {
      if (!flag.empty()) return flag;
      if (fallback.empty()) throw ValidationError(std::string("missing --") + what);
      return fs::path(fallback);
    };

    if (*g) return cmd_gen(cfg, gen, out);
    if (*t) {
      tr.data = dir_or(tr.data, cfg.data_dir, "data");
      if (tr.val.empty()) tr.val = cfg.val_dir;
      return cmd_train(cfg, tr, out);
    }
    if (*p) return cmd_predict(cfg, pr, out);
    if (*e) return cmd_eval(ev, out);
    if (*a) {
      ab.data = dir_or(ab.data, cfg.data_dir, "data");
      ab.val = dir_or(ab.val, cfg.val_dir, "val");
      return cmd_ablate(cfg, ab, out);
    }
  } catch (const ArgumentError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const ValidationError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}

}  // namespace hapt3d::cli
