// simsam: evaluate, segment, serve and generate synthetic corpora.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "simsam/dataset.hpp"
#include "simsam/harness.hpp"
#include "simsam/service.hpp"

namespace {

using namespace simsam;

void configure_logging() {
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
  if (const char* level = std::getenv("SIMSAM_LOG")) {
    spdlog::set_level(spdlog::level::from_str(level));
  } else {
    spdlog::set_level(spdlog::level::info);
  }
}

seg::BackendConfig backend_from(const std::string& kind, const std::string& model_dir) {
  seg::BackendConfig cfg;
  cfg.kind = kind == "neural" ? seg::BackendKind::kNeural : seg::BackendKind::kSynthetic;
  cfg.model_dir = model_dir;
  return cfg;
}

ImageShape parse_size(const std::string& text) {
  const auto x = text.find_first_of("xX");
  if (x == std::string::npos) throw Error(ErrorCode::kInvalidArgument, "size must be HxW");
  try {
    return ImageShape{std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("bad size '{}'", text));
  }
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
#if defined(__GLIBC__)
  mallopt(M_TRIM_THRESHOLD, 64 << 20);
#endif
  CLI::App app{"SimSAM: simulated-click refinement of box-prompted segmentation"};
  app.require_subcommand(1);

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate methods over a dataset manifest");
  std::string config_path;
  eval->add_option("--config", config_path, "TOML experiment config")->required()->check(CLI::ExistingFile);

  // segment
  auto* segment = app.add_subcommand("segment", "Segment one image from a box prompt");
  std::string image_path, box_text, auto_box, scene_path, out_dir = "out", agg = "medoid",
                                                          clicks = "topk", seg_backend = "synthetic",
                                                          seg_model_dir;
  std::size_t k = 50;
  std::uint64_t seed = 0;
  bool no_candidates = false;
  segment->add_option("--image", image_path, "PNG or JPEG image")->required()->check(CLI::ExistingFile);
  auto* box_opt = segment->add_option("--box", box_text, "Inclusive box r0,c0,r1,c1");
  auto* auto_opt = segment->add_option("--auto-box-from", auto_box, "Derive the box from a mask PNG")
                       ->check(CLI::ExistingFile);
  box_opt->excludes(auto_opt);
  segment->add_option("--k", k, "Number of simulated clicks")->check(CLI::PositiveNumber);
  segment->add_option("--agg", agg, "Aggregation")->check(CLI::IsMember({"medoid", "mean", "none"}));
  segment->add_option("--clicks", clicks, "Click source")->check(CLI::IsMember({"topk", "random"}));
  segment->add_option("--seed", seed, "Seed for random clicks");
  segment->add_option("--out", out_dir, "Output directory");
  segment->add_option("--scene", scene_path, "Synthetic scene descriptor (default: <image>.json)")
      ->check(CLI::ExistingFile);
  segment->add_option("--backend", seg_backend, "Backend")->check(CLI::IsMember({"synthetic", "neural"}));
  segment->add_option("--model-dir", seg_model_dir, "Directory with encoder.onnx and decoder.onnx");
  segment->add_flag("--no-candidates", no_candidates, "Skip writing candidate masks");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP segmentation service");
  int port = 8080;
  std::string host = "127.0.0.1", serve_backend = "synthetic", serve_model_dir;
  std::size_t max_sessions = 64;
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(1, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--backend", serve_backend, "Backend")->check(CLI::IsMember({"synthetic", "neural"}));
  serve->add_option("--model-dir", serve_model_dir, "Directory with encoder.onnx and decoder.onnx");
  serve->add_option("--max-sessions", max_sessions, "Sessions kept before LRU eviction")
      ->check(CLI::PositiveNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene corpus");
  std::size_t count = 200;
  std::string size = "64x64", synth_out;
  double noise = 0.8;
  std::uint64_t synth_seed = 0;
  synth->add_option("--count", count, "Number of scenes")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Scene size HxW");
  synth->add_option("--noise", noise, "Value-noise amplitude")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", synth_seed, "Corpus seed");
  synth->add_option("--out", synth_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*eval) {
      const auto cfg = harness::EvalConfig::load(config_path);
      const auto result = harness::cmd_eval(cfg);
      std::cout << result.table.to_text();
    } else if (*segment) {
      harness::SegmentOptions opts;
      opts.image = image_path;
      if (!box_text.empty()) opts.box = harness::parse_box(box_text);
      if (!auto_box.empty()) opts.auto_box_from = auto_box;
      if (!scene_path.empty()) opts.scene = scene_path;
      opts.backend = backend_from(seg_backend, seg_model_dir);
      opts.pipeline.k = k;
      opts.pipeline.seed = seed;
      opts.pipeline.aggregation = pipeline::parse_aggregation(agg);
      opts.pipeline.click_source = pipeline::parse_click_source(clicks);
      opts.out_dir = out_dir;
      opts.write_candidates = !no_candidates;
      const auto run = harness::cmd_segment(opts);
      std::cout << fmt::format("final mask: {} px, union: {} px, candidates: {}, decodes: {}\n",
                               run.final_mask.count(), run.union_mask.count(), run.candidates.size(),
                               run.counters.decode_calls);
    } else if (*serve) {
      service::ServiceConfig cfg;
      cfg.backend = backend_from(serve_backend, serve_model_dir);
      cfg.max_sessions = max_sessions;
      service::Service svc(cfg);
      std::signal(SIGINT, [](int) { service::stop_serving(); });
      std::signal(SIGTERM, [](int) { service::stop_serving(); });
      return service::serve(svc, host, port) ? 0 : 1;
    } else if (*synth) {
      dataset::SynthSpec spec;
      spec.count = count;
      spec.shape = parse_size(size);
      spec.noise_amplitude = noise;
      spec.seed = synth_seed;
      const auto manifest = dataset::synth_corpus(spec, synth_out);
      std::cout << fmt::format("wrote {} scenes to {}\n", manifest.size(), synth_out);
    }
  } catch (const Error& e) {
    spdlog::error("{}: {}", to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 0;
}
