#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "hapt3d/cli.hpp"
#include "support.hpp"

using namespace hapt3d;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "hapt3d");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Writes a config file describing tiny tiles and a tiny network.
fs::path tiny_config(const TempDir& dir) {
  const fs::path p = dir.path() / "tiny.cfg";
  std::ofstream f(p);
  f << "# tiny tiles\n"
       "orchard.trees_per_tile = 2\n"
       "orchard.fruits_per_tree = 4\n"
       "orchard.tile_extent = 4\n"
       "orchard.ground_points = 300\n"
       "orchard.trunk_points = 40\n"
       "orchard.canopy_points = 150\n"
       "orchard.apple_points = 12\n"
       "orchard.pole_points = 30\n"
       "network.encoder_channels = 4,8\n"
       "network.decoder_channels = 8,4\n"
       "network.voxel_size = 0.1\n"
       "train.epochs = 2\n";
  return p;
}

}  // namespace

TEST(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"gen", "--tiles", "1"}).code, 1);  // --out is required
}

TEST(Cli, GenZeroTilesWritesEmptyManifest) {
  TempDir dir;
  const auto r = run({"gen", "--out", (dir.path() / "d").string(), "--tiles", "0"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir.path() / "d" / "manifest.txt"));
  EXPECT_EQ(slurp(dir.path() / "d" / "manifest.txt"), "");
  EXPECT_EQ(cli::list_ply(dir.path() / "d").size(), 0u);
}

TEST(Cli, GenIsDeterministicAndGuarded) {
  TempDir dir;
  const auto cfg = tiny_config(dir).string();
  const auto a = dir.path() / "a", b = dir.path() / "b";
  ASSERT_EQ(run({"gen", "--out", a.string(), "--tiles", "2", "--seed", "9", "--config", cfg}).code, 0);
  ASSERT_EQ(run({"hops-gen", "--out", b.string(), "--tiles", "2", "--seed", "9", "--config", cfg}).code, 0);
  for (const char* name : {"tile_0000.ply", "tile_0001.ply", "manifest.txt"}) EXPECT_EQ(slurp(a / name), slurp(b / name));
  EXPECT_NE(slurp(a / "tile_0000.ply"), slurp(a / "tile_0001.ply"));
  const std::string manifest = slurp(a / "manifest.txt");
  EXPECT_NE(manifest.find("tile=tile_0001.ply points="), std::string::npos);
  EXPECT_NE(manifest.find("fruits_per_tree="), std::string::npos);

  std::ofstream(a / "keep.txt") << "mine";
  EXPECT_EQ(run({"gen", "--out", a.string(), "--tiles", "1", "--config", cfg}).code, 1);
  EXPECT_TRUE(fs::exists(a / "tile_0001.ply"));
  EXPECT_EQ(run({"gen", "--out", a.string(), "--tiles", "1", "--config", cfg, "--force"}).code, 0);
  EXPECT_FALSE(fs::exists(a / "tile_0001.ply"));
  EXPECT_TRUE(fs::exists(a / "keep.txt"));
}

TEST(Cli, ConfigErrorsAreValidationFailures) {
  TempDir dir;
  const auto out = (dir.path() / "d").string();
  EXPECT_EQ(run({"gen", "--out", out, "--tiles", "1", "--set", "orchard.no_such_key=1"}).code, 1);
  EXPECT_EQ(run({"gen", "--out", out, "--tiles", "1", "--set", "orchard.trees_per_tile"}).code, 1);
  EXPECT_EQ(run({"gen", "--out", out, "--tiles", "1", "--set", "orchard.trees_per_tile=lots"}).code, 1);
  EXPECT_EQ(run({"gen", "--out", out, "--tiles", "1", "--config", (dir.path() / "missing.cfg").string()}).code, 1);
  const fs::path bad = dir.path() / "bad.cfg";
  std::ofstream(bad) << "train.lr = 0.1\nthis line has no equals sign\n";
  const auto r = run({"gen", "--out", out, "--tiles", "1", "--config", bad.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("2"), std::string::npos);  // names the offending line
}

TEST(Cli, EvalOfGroundTruthAgainstItselfIsPerfect) {
  TempDir dir;
  const auto cfg = tiny_config(dir).string();
  const auto d = dir.path() / "tiles";
  ASSERT_EQ(run({"gen", "--out", d.string(), "--tiles", "2", "--config", cfg}).code, 0);
  const auto kv = dir.path() / "m.kv";
  const auto r = run({"eval", "--pred", d.string(), "--gt", d.string(), "--out", kv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = slurp(kv);
  for (const char* key : {"miou=1\n", "pq=1\n", "pq_t=1\n", "mpq=1\n"}) EXPECT_NE(text.find(key), std::string::npos) << key;
  EXPECT_NE(r.out.find("mPQ 1.0000"), std::string::npos);
}

TEST(Cli, EvalScoresASplitTreeAsZero) {
  TempDir dir;
  LabeledCloud gt;
  for (int i = 0; i < 20; ++i) gt.points.push_back({{0.1 * i, 0, 0}, {}, kTrunk, 0, 0});
  LabeledCloud pred = gt;
  for (int i = 10; i < 20; ++i) pred.points[i].tree_id = 1;
  fs::create_directories(dir.path() / "gt");
  fs::create_directories(dir.path() / "pred");
  save_ply(gt, dir.path() / "gt" / "t.ply");
  save_ply(pred, dir.path() / "pred" / "t.ply", ValidationMode::kPrediction);
  const auto r = run({"eval", "--pred", (dir.path() / "pred").string(), "--gt", (dir.path() / "gt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = slurp(dir.path() / "pred" / "metrics.kv");
  EXPECT_NE(text.find("pq_t=0\n"), std::string::npos);
  EXPECT_NE(text.find("counts.tree=0,2,1\n"), std::string::npos);
}

TEST(Cli, EvalMissingPredictionFails) {
  TempDir dir;
  const auto cfg = tiny_config(dir).string();
  const auto d = dir.path() / "tiles";
  ASSERT_EQ(run({"gen", "--out", d.string(), "--tiles", "1", "--config", cfg}).code, 0);
  fs::create_directories(dir.path() / "empty");
  EXPECT_EQ(run({"eval", "--pred", (dir.path() / "empty").string(), "--gt", d.string()}).code, 1);
}

TEST(Cli, TrainPredictEvalRoundTrip) {
  TempDir dir;
  const auto cfg = tiny_config(dir).string();
  const auto tiles = dir.path() / "tiles";
  ASSERT_EQ(run({"gen", "--out", tiles.string(), "--tiles", "1", "--config", cfg}).code, 0);
  const auto ckpt = dir.path() / "net.ckpt";
  const auto t = run({"train", "--data", tiles.string(), "--out", ckpt.string(), "--config", cfg, "--seed", "3",
                      "--scheme", "C", "--set", "train.epochs=1", "--epochs", "2"});
  ASSERT_EQ(t.code, 0) << t.err;
  const std::string history = slurp(ckpt.string() + ".history");
  EXPECT_NE(history.find("epoch=1 loss="), std::string::npos);
  EXPECT_NE(history.find("epoch=2 loss="), std::string::npos);  // --epochs beats the config
  const auto net = load_checkpoint(ckpt);
  EXPECT_EQ(net->config().skip_scheme, SkipScheme::kEncoder);
  EXPECT_EQ(net->config().seed, 3u);

  const auto preds = dir.path() / "preds";
  const auto p = run({"predict", "--ckpt", ckpt.string(), "--in", tiles.string(), "--out", preds.string()});
  ASSERT_EQ(p.code, 0) << p.err;
  const LabeledCloud in = load_ply(tiles / "tile_0000.ply");
  const LabeledCloud out = load_ply(preds / "tile_0000.ply", ValidationMode::kPrediction);
  ASSERT_EQ(out.size(), in.size());
  for (std::size_t i = 0; i < in.size(); ++i) ASSERT_EQ(out.points[i].position, in.points[i].position);

  const auto single = dir.path() / "one.ply";
  ASSERT_EQ(run({"predict", "--ckpt", ckpt.string(), "--in", (tiles / "tile_0000.ply").string(), "--out",
                 single.string()})
                .code,
            0);
  EXPECT_EQ(slurp(single), slurp(preds / "tile_0000.ply"));
  EXPECT_EQ(run({"eval", "--pred", preds.string(), "--gt", tiles.string()}).code, 0);
  EXPECT_TRUE(fs::exists(preds / "metrics.kv"));
}

TEST(Cli, TrainNeedsData) {
  TempDir dir;
  EXPECT_EQ(run({"train", "--out", (dir.path() / "x.ckpt").string()}).code, 1);
  fs::create_directories(dir.path() / "empty");
  EXPECT_EQ(run({"train", "--data", (dir.path() / "empty").string(), "--out", (dir.path() / "x.ckpt").string()}).code,
            1);
  EXPECT_EQ(run({"train", "--data", (dir.path() / "empty").string(), "--out", (dir.path() / "x.ckpt").string(),
                 "--scheme", "Z"})
                .code,
            1);
}

TEST(Cli, PredictRejectsCorruptCheckpoint) {
  TempDir dir;
  const auto ckpt = dir.path() / "bad.ckpt";
  std::ofstream(ckpt) << "not a checkpoint";
  EXPECT_EQ(run({"predict", "--ckpt", ckpt.string(), "--in", dir.path().string(), "--out",
                 (dir.path() / "o").string()})
                .code,
            1);
}
