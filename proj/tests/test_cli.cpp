#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "support.hpp"

namespace fs = std::filesystem;
using namespace depthcal;
using testing_support::scratch_dir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI inside `dir`; stderr is folded into the output when `merge` is set.
Run cli(const fs::path& dir, const std::string& args, bool merge = false) {
  const std::string cmd = "cd '" + dir.string() + "' && " + DEPTHCAL_CLI + " " + args + (merge ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

bool contains(const std::string& hay, const std::string& needle) { return hay.find(needle) != std::string::npos; }

std::string data(const std::string& name) { return std::string(DEPTHCAL_TEST_DATA) + "/" + name; }

}  // namespace

TEST(CliSynth, SameSeedSameBytes) {
  const auto dir = scratch_dir("cli_synth");
  const auto a = cli(dir, "synth --seed 7");
  const auto b = cli(dir, "synth --seed 7");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_TRUE(fs::exists(dir / "depth_7.txt"));
  EXPECT_NE(a.out, cli(dir, "synth --seed 8").out);
}

TEST(CliSynth, OutWritesSceneAndDepthBesideIt) {
  const auto dir = scratch_dir("cli_synth_out");
  fs::create_directories(dir / "sub");
  ASSERT_EQ(cli(dir, "synth --seed 3 --out sub/s.json").code, 0);
  EXPECT_TRUE(fs::exists(dir / "sub" / "s.depth.txt"));
  const auto scene = io::load_scene((dir / "sub" / "s.json").string());
  EXPECT_EQ(scene.objects.size(), synth::SceneConfig{}.n_objects);
}

TEST(CliSynth, FlipAndLimits) {
  const auto dir = scratch_dir("cli_synth_flip");
  const auto flip = cli(dir, "synth --seed 1 --flip");
  ASSERT_EQ(flip.code, 0);
  EXPECT_TRUE(contains(flip.out, "\"flip_scenario\": true"));

  const auto limit = cli(dir, "synth --n 101", true);
  EXPECT_EQ(limit.code, 2);
  EXPECT_TRUE(contains(limit.out, "packing/limit")) << limit.out;
}

TEST(CliPipeline, DeterministicAndMatchesGolden) {
  const auto dir = scratch_dir("cli_pipeline");
  ASSERT_EQ(cli(dir, "synth --seed 7 --out scene.json").code, 0);
  const auto a = cli(dir, "pipeline scene.json");
  const auto b = cli(dir, "pipeline scene.json --jobs 3");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(a.out, io::read_file(std::string(DEPTHCAL_GOLDEN_DIR) + "/seed7_report.json"));
}

TEST(CliPipeline, NoDacLeavesScoresUncalibrated) {
  const auto dir = scratch_dir("cli_nodac");
  ASSERT_EQ(cli(dir, "synth --seed 4 --out scene.json").code, 0);
  const auto r = cli(dir, "pipeline scene.json --no-dac");
  ASSERT_EQ(r.code, 0);
  const auto j = json::Json::parse(r.out);
  EXPECT_EQ(j["beta_calibrated"], j["beta"]);
}

TEST(CliPipeline, ParamsRoundTripThroughDump) {
  const auto dir = scratch_dir("cli_params");
  ASSERT_EQ(cli(dir, "synth --seed 5 --out scene.json").code, 0);
  const auto a = cli(dir, "pipeline scene.json --seed-params 9 --dump-params p.json");
  const auto b = cli(dir, "pipeline scene.json --params p.json");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
}

TEST(CliPipeline, ErrorExitCodes) {
  const auto dir = scratch_dir("cli_errors");
  ASSERT_EQ(cli(dir, "synth --seed 2 --d 8 --out s8.json").code, 0);
  ASSERT_EQ(cli(dir, "synth --seed 2 --d 16 --out s16.json").code, 0);
  ASSERT_EQ(cli(dir, "pipeline s16.json --seed-params 1 --dump-params p16.json").code, 0);
  const auto dim = cli(dir, "pipeline s8.json --params p16.json", true);
  EXPECT_EQ(dim.code, 3) << dim.out;

  io::write_file((dir / "broken.json").string(), "{\n  \"image\": {\"h\": 2,\n");
  const auto bad = cli(dir, "pipeline broken.json", true);
  EXPECT_EQ(bad.code, 2);
  EXPECT_TRUE(contains(bad.out, "line ")) << bad.out;
  EXPECT_EQ(cli(dir, "pipeline missing.json").code, 2);
}

TEST(CliGradCheck, PassFailAndSeeds) {
  const auto dir = scratch_dir("cli_grad");
  const auto ok = cli(dir, "grad-check --module all --seeds 10");
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_TRUE(contains(ok.out, "all blocks pass"));
  EXPECT_EQ(cli(dir, "grad-check --module relation --seeds 2 --perturb-analytic").code, 1);
  const auto none = cli(dir, "grad-check --seeds 0", true);
  EXPECT_EQ(none.code, 2);
  EXPECT_TRUE(contains(none.out, "no seeds")) << none.out;
}

TEST(CliAnls, ScoresLines) {
  const auto dir = scratch_dir("cli_anls");
  io::write_file((dir / "p.txt").string(), "exit\nwest\n");
  io::write_file((dir / "g.txt").string(), "exit\nbest\n");
  const auto same = cli(dir, "anls g.txt g.txt");
  ASSERT_EQ(same.code, 0);
  EXPECT_TRUE(contains(same.out, "mean\t1\n")) << same.out;
  const auto mixed = cli(dir, "anls p.txt g.txt");
  EXPECT_TRUE(contains(mixed.out, "2\t0.75\n")) << mixed.out;
  EXPECT_TRUE(contains(mixed.out, "mean\t0.875\n")) << mixed.out;

  io::write_file((dir / "e.txt").string(), "");
  const auto empty = cli(dir, "anls e.txt e.txt", true);
  EXPECT_EQ(empty.code, 2);
  EXPECT_TRUE(contains(empty.out, "empty-input")) << empty.out;
  EXPECT_EQ(cli(dir, "anls p.txt e.txt").code, 2);
}

TEST(CliSubset, FixtureAndErrors) {
  const auto dir = scratch_dir("cli_subset");
  const auto r = cli(dir, "subset-split " + data("questions20.jsonl") + " --out sub.jsonl");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(r.out, "total 20\nselected 8\n");

  io::write_file((dir / "plain.jsonl").string(), "{\"id\": \"a\", \"question\": \"What is shown?\", \"answers\": []}\n");
  const auto none = cli(dir, "subset-split plain.jsonl --out none.jsonl");
  EXPECT_EQ(none.out, "total 1\nselected 0\n");
  EXPECT_EQ(io::read_file((dir / "none.jsonl").string()), "");

  io::write_file((dir / "bad.jsonl").string(),
                 "{\"id\": \"a\", \"question\": \"on\", \"answers\": []}\n{\"id\": \"b\", \"question\": \n");
  const auto bad = cli(dir, "subset-split bad.jsonl", true);
  EXPECT_EQ(bad.code, 2);
  EXPECT_TRUE(contains(bad.out, "bad.jsonl line 2")) << bad.out;
}

TEST(CliDedup, DropsDuplicateAndKeepsPlanted) {
  const auto dir = scratch_dir("cli_dedup");
  ASSERT_EQ(cli(dir, "synth --seed 6 --out scene.json").code, 0);
  auto j = json::Json::parse(io::read_file((dir / "scene.json").string()));
  const std::size_t m = j["ocr"].size();
  const std::size_t planted = j["planted"]["ocr"].get<std::size_t>();
  j["ocr"].push_back(j["ocr"][planted]);
  io::write_file((dir / "dup.json").string(), json::dump(j));

  const auto r = cli(dir, "dedup dup.json --out clean.json");
  ASSERT_EQ(r.code, 0);
  const auto clean = json::Json::parse(io::read_file((dir / "clean.json").string()));
  EXPECT_EQ(clean["ocr"].size(), m);
  EXPECT_EQ(clean["ocr"][clean["planted"]["ocr"].get<std::size_t>()], j["ocr"][planted]);
  EXPECT_NO_THROW(io::load_scene((dir / "clean.json").string()));
}
