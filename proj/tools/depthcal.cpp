#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "depthcal/depthcal.hpp"

namespace fs = std::filesystem;
using namespace depthcal;

namespace {

constexpr int kExitFail = 1;
constexpr int kExitInput = 2;
constexpr int kExitDim = 3;

void setup_logging() {
  auto logger = spdlog::stderr_color_st("depthcal");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::err);
  const char* env = std::getenv("DEPTHCAL_LOG");
  if (!env) return;
  const std::string level = env;
  if (level == "error") spdlog::set_level(spdlog::level::err);
  else if (level == "info") spdlog::set_level(spdlog::level::info);
  else if (level == "debug") spdlog::set_level(spdlog::level::debug);
  else spdlog::warn("DEPTHCAL_LOG={} not recognized, using error", level);
}

std::string read_input(const std::string& path) {
  if (path != "-") return io::read_file(path);
  return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    io::write_file(out_path, text);
    spdlog::info("wrote {}", out_path);
  }
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

synth::Scene load_scene_arg(const std::string& path) {
  if (path == "-") return io::parse_scene(read_input(path), "<stdin>", "");
  return io::load_scene(path);
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  synth::SceneConfig cfg;
  std::string out;
  std::string depth_out;
};

void cmd_synth(const SynthArgs& a) {
  const auto scene = synth::generate_scene(a.cfg);

  fs::path depth_path = a.depth_out;
  if (depth_path.empty()) {
    depth_path = a.out.empty() ? fs::path("depth_" + std::to_string(a.cfg.seed) + ".txt")
                               : fs::path(a.out).replace_extension(".depth.txt");
  }
  io::save_depth_map(depth_path.string(), scene.depth);

  // The scene records the depth map relative to wherever the scene lives.
  std::string recorded = depth_path.string();
  if (!a.out.empty()) {
    const auto scene_dir = fs::absolute(fs::path(a.out)).parent_path();
    recorded = fs::absolute(depth_path).lexically_relative(scene_dir).string();
  }
  spdlog::info("scene seed={} objects={} ocr={} depth={}", a.cfg.seed, scene.objects.size(), scene.ocrs.size(),
               depth_path.string());
  emit(io::format_scene(scene, recorded), a.out);
}

struct PipelineArgs {
  std::vector<std::string> scenes;
  std::string params_path;
  std::uint64_t seed_params = 0;
  bool no_dac = false;
  double lambda = 1.0;
  bool timings = false;
  std::string out;
  unsigned jobs = 1;
  std::string dump_params;
};

std::string run_one(const std::string& name, const synth::Scene& scene, const ModelParams& params,
                    const PipelineOptions& opts, bool timings) {
  const auto report = run_pipeline(scene, params, opts);
  for (const auto& t : report.timings) spdlog::debug("{}: {} {:.3f} ms", name, t.stage, t.ms);
  spdlog::info("{}: predicted '{}'", name, report.predicted_answer);
  return json::dump(report_to_json(report, timings));
}

void cmd_pipeline(const PipelineArgs& a) {
  std::vector<synth::Scene> scenes;
  for (const auto& path : a.scenes) scenes.push_back(load_scene_arg(path));
  const ModelParams params = a.params_path.empty() ? init_params(a.seed_params, scenes.front().question.dim())
                                                   : parse_params(io::read_file(a.params_path), a.params_path);
  if (!a.dump_params.empty()) io::write_file(a.dump_params, json::dump(params_to_json(params)) + "\n");

  PipelineOptions opts;
  opts.apply_transfer = !a.no_dac;
  opts.train.lambda_spatial = a.lambda;

  std::vector<std::string> reports(scenes.size());
  const auto run_k = [&](std::size_t k) { reports[k] = run_one(a.scenes[k], scenes[k], params, opts, a.timings); };
  if (a.jobs <= 1 || scenes.size() == 1) {
    for (std::size_t k = 0; k < scenes.size(); ++k) run_k(k);
  } else {
    // Scenes are independent; each worker takes a strided slice and writes
    // only its own slots.
    std::vector<std::future<void>> workers;
    for (unsigned w = 0; w < a.jobs; ++w) {
      workers.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t k = w; k < scenes.size(); k += a.jobs) run_k(k);
      }));
    }
    for (auto& f : workers) f.get();
  }

  std::string text;
  for (const auto& r : reports) text += r + "\n";
  emit(text, a.out);
}

int cmd_grad_check(const std::string& module, std::size_t seeds, bool perturb) {
  gradcheck::Options opts;
  opts.seeds = seeds;
  opts.perturb_analytic = perturb;
  const auto results = gradcheck::run(module, opts);
  std::printf("%-24s %-9s %5s %14s  %s\n", "block", "module", "seeds", "max_rel_error", "status");
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-24s %-9s %5zu %14.3e  %s\n", r.block.c_str(), r.module.c_str(), r.seeds, r.max_rel_error,
                r.passed() ? "pass" : "FAIL");
    ok = ok && r.passed();
  }
  std::printf("tolerance %.0e: %s\n", gradcheck::kTolerance, ok ? "all blocks pass" : "some blocks fail");
  return ok ? 0 : kExitFail;
}

void cmd_anls(const std::string& pred_path, const std::string& gt_path) {
  const auto preds = split_lines(io::read_file(pred_path));
  const auto gts = split_lines(io::read_file(gt_path));
  if (preds.size() != gts.size()) {
    throw Error(Errc::schema, pred_path + " has " + std::to_string(preds.size()) + " lines but " + gt_path +
                                  " has " + std::to_string(gts.size()));
  }
  if (preds.empty()) throw Error(Errc::empty_input, "no lines to score");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double s = evalkit::anls(preds[i], gts[i]);
    sum += s;
    std::printf("%zu\t%.17g\n", i + 1, s);
  }
  std::printf("mean\t%.17g\n", sum / static_cast<double>(preds.size()));
}

void cmd_subset_split(const std::string& path, const std::string& out) {
  const auto lines = split_lines(read_input(path));
  std::vector<std::string> questions;
  std::vector<std::size_t> line_of;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    if (lines[n].find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path + " line " + std::to_string(n + 1);
    json::Json j;
    try {
      j = json::Json::parse(lines[n]);
    } catch (const json::Json::parse_error&) {
      throw Error(Errc::schema, where + ": malformed JSON");
    }
    if (!j.is_object()) throw Error(Errc::schema, where + ": expected an object");
    if (!j.contains("id") || !j["id"].is_string()) throw Error(Errc::schema, where + ": \"id\" must be a string");
    if (!j.contains("question") || !j["question"].is_string()) {
      throw Error(Errc::schema, where + ": \"question\" must be a string");
    }
    if (!j.contains("answers") || !j["answers"].is_array()) {
      throw Error(Errc::schema, where + ": \"answers\" must be an array");
    }
    for (const auto& ans : j["answers"]) {
      if (!ans.is_string()) throw Error(Errc::schema, where + ": answers must be strings");
    }
    questions.push_back(j["question"].get<std::string>());
    line_of.push_back(n);
  }

  std::string subset;
  const auto picked = evalkit::subset_filter(questions);
  for (std::size_t k : picked) subset += lines[line_of[k]] + "\n";
  emit(subset, out);
  std::fprintf(out.empty() ? stderr : stdout, "total %zu\nselected %zu\n", questions.size(), picked.size());
}

void cmd_dedup(const std::string& path, double threshold, const std::string& out) {
  const json::Document doc(read_input(path), path == "-" ? "<stdin>" : path);
  json::Json root = doc.root();
  const auto& ocr = doc.array(doc.at(root, "", "ocr"), "/ocr");

  std::vector<Token> tokens;
  for (std::size_t j = 0; j < ocr.size(); ++j) {
    const std::string ptr = "/ocr/" + std::to_string(j);
    const auto c = doc.numbers(doc.at(ocr[j], ptr, "bbox"), ptr + "/bbox");
    if (c.size() != 4) doc.fail(Errc::schema, ptr + "/bbox", "bbox must have 4 numbers");
    Token t;
    t.kind = TokenKind::ocr;
    t.box = {c[0], c[1], c[2], c[3]};
    if (!t.box.well_formed() || !(t.box.area() > 0.0)) doc.fail(Errc::schema, ptr + "/bbox", "invalid OCR box");
    t.text = doc.string(doc.at(ocr[j], ptr, "text"), ptr + "/text");
    tokens.push_back(std::move(t));
  }

  const auto keep = evalkit::noise_reduction_keep(tokens, threshold);
  json::Json kept = json::Json::array();
  for (std::size_t j : keep) kept.push_back(ocr[j]);
  spdlog::info("dedup kept {} of {} OCR tokens", keep.size(), tokens.size());

  if (auto it = root.find("planted"); it != root.end() && it->contains("ocr")) {
    const auto old = (*it)["ocr"].get<std::size_t>();
    const auto pos = std::find(keep.begin(), keep.end(), old);
    if (pos == keep.end()) {
      spdlog::warn("planted OCR {} was removed; dropping the planted field", old);
      root.erase("planted");
    } else {
      (*it)["ocr"] = static_cast<std::size_t>(pos - keep.begin());
    }
  }
  root["ocr"] = std::move(kept);
  emit(json::dump(root) + "\n", out);
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Depth-aware attention calibration toolkit"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene and its depth map");
  auto& cfg = synth_args.cfg;
  synth->add_option("--seed", cfg.seed, "Generator seed");
  synth->add_option("--n", cfg.n_objects, "Object count")->capture_default_str();
  synth->add_option("--m", cfg.n_ocr, "OCR token count")->capture_default_str();
  synth->add_option("--d", cfg.dim, "Feature dimension")->capture_default_str();
  synth->add_option("--distractors", cfg.distractor_count, "OCR tokens on objects other than the key one")
      ->capture_default_str();
  synth->add_option("--layers", cfg.depth_layers, "Depth planes")->capture_default_str();
  synth->add_flag("--flip", cfg.flip_scenario, "Make a distractor outrank the planted OCR before calibration");
  synth->add_option("--height", cfg.height, "Image height")->capture_default_str();
  synth->add_option("--width", cfg.width, "Image width")->capture_default_str();
  synth->add_option("--question-length", cfg.question_length, "Question tokens")->capture_default_str();
  synth->add_option("--out", synth_args.out, "Scene JSON path (default stdout)");
  synth->add_option("--depth-out", synth_args.depth_out, "Depth map path; a .dmap suffix selects the binary format");

  PipelineArgs pipe_args;
  auto* pipe = app.add_subcommand("pipeline", "Run one forward pass and print a report");
  pipe->add_option("scenes", pipe_args.scenes, "Scene JSON files, or - for stdin")->required();
  auto* params_opt = pipe->add_option("--params", pipe_args.params_path, "Parameter JSON file");
  pipe->add_option("--seed-params", pipe_args.seed_params, "Seed for parameter initialization")
      ->excludes(params_opt)
      ->capture_default_str();
  pipe->add_flag("--no-dac", pipe_args.no_dac, "Zero the transfer matrix");
  pipe->add_option("--lambda", pipe_args.lambda, "Spatial loss weight")->capture_default_str();
  pipe->add_flag("--timings", pipe_args.timings, "Include per-stage timings in the report");
  pipe->add_option("--out", pipe_args.out, "Report path (default stdout)");
  pipe->add_option("--jobs", pipe_args.jobs, "Scenes evaluated concurrently")->check(CLI::PositiveNumber);
  pipe->add_option("--dump-params", pipe_args.dump_params, "Write the parameters used to this file");

  std::string gc_module = "all";
  std::size_t gc_seeds = 10;
  bool gc_perturb = false;
  auto* gc = app.add_subcommand("grad-check", "Compare analytic and finite-difference gradients");
  gc->add_option("--module", gc_module, "Module to check")
      ->check(CLI::IsMember({"dac", "relation", "evalkit", "numerics", "all"}))
      ->capture_default_str();
  gc->add_option("--seeds", gc_seeds, "Random instances per block")->capture_default_str();
  gc->add_flag("--perturb-analytic", gc_perturb, "Corrupt analytic gradients (sensitivity check)");

  std::string pred_path, gt_path;
  auto* anls = app.add_subcommand("anls", "Score predictions against answers line by line");
  anls->add_option("pred_file", pred_path)->required();
  anls->add_option("gt_file", gt_path)->required();

  std::string questions_path, subset_out;
  auto* subset = app.add_subcommand("subset-split", "Select questions containing on/top/under");
  subset->add_option("questions", questions_path, "JSONL question file, or - for stdin")->required();
  subset->add_option("--out", subset_out, "Subset JSONL path (default stdout)");

  std::string dedup_path, dedup_out;
  double dedup_threshold = 0.5;
  auto* dedup = app.add_subcommand("dedup", "Drop duplicate and contained OCR tokens from a scene");
  dedup->add_option("scene", dedup_path, "Scene JSON file, or - for stdin")->required();
  dedup->add_option("--threshold", dedup_threshold, "IoU above which tokens are duplicates")->capture_default_str();
  dedup->add_option("--out", dedup_out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (*synth) cmd_synth(synth_args);
    else if (*pipe) cmd_pipeline(pipe_args);
    else if (*gc) return cmd_grad_check(gc_module, gc_seeds, gc_perturb);
    else if (*anls) cmd_anls(pred_path, gt_path);
    else if (*subset) cmd_subset_split(questions_path, subset_out);
    else if (*dedup) cmd_dedup(dedup_path, dedup_threshold, dedup_out);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == Errc::dim_mismatch ? kExitDim : kExitInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitInput;
  }
  return 0;
}
