#include "simsam/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <toml.hpp>

#include "simsam/mask_io.hpp"
#include "simsam/metrics.hpp"
#include "simsam/synthetic_segmenter.hpp"

namespace simsam::harness {

namespace fs = std::filesystem;

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::kBaseline:
      return "baseline";
    case Method::kSimsam:
      return "simsam";
    case Method::kRandomQ:
      return "random_q";
    case Method::kPixelAgg:
      return "pixel_agg";
    case Method::kK1:
      return "k1";
  }
  return "baseline";
}

Method parse_method(std::string_view text) {
  for (Method m : {Method::kBaseline, Method::kSimsam, Method::kRandomQ, Method::kPixelAgg,
                   Method::kK1}) {
    if (text == to_string(m)) return m;
  }
  throw Error(ErrorCode::kConfig, fmt::format("unknown method '{}'", text));
}

pipeline::PipelineConfig method_config(Method m, std::size_t k, std::uint64_t seed) {
  using pipeline::Aggregation;
  using pipeline::ClickSource;
  pipeline::PipelineConfig cfg;
  cfg.k = k;
  cfg.seed = seed;
  switch (m) {
    case Method::kBaseline:
      cfg.aggregation = Aggregation::kNone;
      break;
    case Method::kSimsam:
      break;
    case Method::kRandomQ:
      cfg.click_source = ClickSource::kRandom;
      break;
    case Method::kPixelAgg:
      cfg.aggregation = Aggregation::kPixelMean;
      break;
    case Method::kK1:
      // A single candidate is its own medoid: no aggregation takes place.
      cfg.k = 1;
      break;
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Config

namespace {

fs::path resolve(const fs::path& p, const fs::path& base) {
  return p.is_absolute() || base.empty() ? p : base / p;
}

template <class T>
T require_integer(const toml::node_view<const toml::node>& node, std::string_view key, T fallback) {
  if (!node) return fallback;
  const auto v = node.value<std::int64_t>();
  if (!v || *v < 0) throw Error(ErrorCode::kConfig, fmt::format("'{}' must be a non-negative integer", key));
  return static_cast<T>(*v);
}

std::string require_string(const toml::node_view<const toml::node>& node, std::string_view key,
                           std::string fallback) {
  if (!node) return fallback;
  const auto v = node.value<std::string>();
  if (!v) throw Error(ErrorCode::kConfig, fmt::format("'{}' must be a string", key));
  return *v;
}

}  // namespace

EvalConfig EvalConfig::from_toml(std::string_view text, const fs::path& base_dir) {
  toml::table root;
  try {
    root = toml::parse(text);
  } catch (const toml::parse_error& e) {
    throw Error(ErrorCode::kConfig, fmt::format("config: {}", e.description()));
  }
  const toml::node_view<const toml::node> view{root};

  EvalConfig cfg;
  const auto manifest = require_string(view["dataset"]["manifest"], "dataset.manifest", "");
  if (manifest.empty()) throw Error(ErrorCode::kConfig, "config needs dataset.manifest");
  cfg.manifest = resolve(manifest, base_dir);

  const auto split = require_string(view["dataset"]["split"], "dataset.split", "test");
  if (split == "test") {
    cfg.split = SplitChoice::kTest;
  } else if (split == "all") {
    cfg.split = SplitChoice::kAll;
  } else if (split == "manifest") {
    cfg.split = SplitChoice::kManifest;
  } else {
    throw Error(ErrorCode::kConfig, fmt::format("unknown dataset.split '{}'", split));
  }
  cfg.split_seed = require_integer(view["dataset"]["split_seed"], "dataset.split_seed", cfg.split_seed);

  const auto kind = require_string(view["backend"]["kind"], "backend.kind", "synthetic");
  if (kind == "synthetic") {
    cfg.backend.kind = seg::BackendKind::kSynthetic;
  } else if (kind == "neural") {
    cfg.backend.kind = seg::BackendKind::kNeural;
  } else {
    throw Error(ErrorCode::kConfig, fmt::format("unknown backend.kind '{}'", kind));
  }
  const auto model_dir = require_string(view["backend"]["model_dir"], "backend.model_dir", "");
  if (!model_dir.empty()) cfg.backend.model_dir = resolve(model_dir, base_dir);

  if (const auto* methods = view["eval"]["methods"].as_array()) {
    cfg.methods.clear();
    for (const auto& m : *methods) {
      const auto name = m.value<std::string>();
      if (!name) throw Error(ErrorCode::kConfig, "eval.methods must hold strings");
      cfg.methods.push_back(parse_method(*name));
    }
  } else if (view["eval"]["methods"]) {
    throw Error(ErrorCode::kConfig, "eval.methods must be an array");
  }
  cfg.k = require_integer(view["eval"]["k"], "eval.k", cfg.k);
  cfg.seed = require_integer(view["eval"]["seed"], "eval.seed", cfg.seed);
  cfg.workers = require_integer(view["eval"]["workers"], "eval.workers", cfg.workers);
  if (const auto node = view["eval"]["nsd_tolerance"]) {
    const auto tol = node.value<double>();
    if (!tol) throw Error(ErrorCode::kConfig, "eval.nsd_tolerance must be a number");
    cfg.nsd_tolerance = *tol;
  }
  cfg.out_dir = resolve(require_string(view["eval"]["out_dir"], "eval.out_dir", "results"), base_dir);
  cfg.validate();
  return cfg;
}

EvalConfig EvalConfig::load(const fs::path& path) {
  const auto bytes = io::read_file(path);
  return from_toml(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                   path.parent_path());
}

void EvalConfig::validate() const {
  if (methods.empty()) throw Error(ErrorCode::kConfig, "eval.methods is empty");
  for (std::size_t i = 0; i < methods.size(); ++i) {
    for (std::size_t j = i + 1; j < methods.size(); ++j) {
      if (methods[i] == methods[j]) {
        throw Error(ErrorCode::kConfig,
                    fmt::format("method '{}' listed twice", to_string(methods[i])));
      }
    }
  }
  if (k == 0) throw Error(ErrorCode::kConfig, "eval.k must be >= 1");
  if (workers == 0) throw Error(ErrorCode::kConfig, "eval.workers must be >= 1");
  if (!(nsd_tolerance >= 0.0)) throw Error(ErrorCode::kConfig, "eval.nsd_tolerance must be >= 0");
}

// ---------------------------------------------------------------------------
// Records and report

nlohmann::ordered_json EvalRecord::to_json() const {
  nlohmann::ordered_json j;
  j["entry"] = entry_id;
  j["method"] = to_string(method);
  j["dsc"] = dsc;
  j["nsd"] = nsd;
  j["latency_ms"] = latency_ms;
  j["encode_calls"] = encode_calls;
  j["decode_calls"] = decode_calls;
  j["flags"] = flags;
  return j;
}

namespace {

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<long>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<long>(mid));
  return 0.5 * (lower + upper);
}

std::string p_cell(const std::optional<stats::WilcoxonResult>& test) {
  return test ? fmt::format("{:.6g}", test->p_value) : std::string();
}

}  // namespace

const MethodSummary* ReportTable::find(Method m) const noexcept {
  for (const auto& row : rows) {
    if (row.method == m) return &row;
  }
  return nullptr;
}

ReportTable summarize(const std::vector<EvalRecord>& records, const std::vector<Method>& methods) {
  struct Column {
    std::vector<std::string> ids;
    std::vector<double> dsc, nsd, latency;
    std::size_t flagged = 0;
  };
  std::vector<Column> columns(methods.size());
  for (const auto& r : records) {
    const auto it = std::find(methods.begin(), methods.end(), r.method);
    if (it == methods.end()) continue;
    Column& col = columns[static_cast<std::size_t>(it - methods.begin())];
    col.ids.push_back(r.entry_id);
    col.dsc.push_back(r.dsc);
    col.nsd.push_back(r.nsd);
    col.latency.push_back(r.latency_ms);
    if (!r.flags.empty()) ++col.flagged;
  }
  for (std::size_t i = 1; i < columns.size(); ++i) {
    if (columns[i].ids != columns[0].ids) {
      throw Error(ErrorCode::kInvalidArgument, "methods were evaluated on different entries");
    }
  }
  const auto base = std::find(methods.begin(), methods.end(), Method::kBaseline);

  ReportTable table;
  for (std::size_t i = 0; i < methods.size(); ++i) {
    const Column& col = columns[i];
    if (col.ids.empty()) throw Error(ErrorCode::kInvalidArgument, "no records to summarize");
    MethodSummary row;
    row.method = methods[i];
    row.n = col.ids.size();
    row.dsc = stats::mean_std(col.dsc);
    row.nsd = stats::mean_std(col.nsd);
    row.latency_median_ms = median(col.latency);
    row.latency_mean_ms = stats::mean_std(col.latency).mean;
    row.flagged = col.flagged;
    if (base != methods.end() && methods[i] != Method::kBaseline) {
      const Column& ref = columns[static_cast<std::size_t>(base - methods.begin())];
      row.dsc_test = stats::wilcoxon_signed_rank({col.dsc, ref.dsc});
      row.nsd_test = stats::wilcoxon_signed_rank({col.nsd, ref.nsd});
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string ReportTable::to_csv() const {
  std::string out =
      "method,n,dsc_mean,dsc_std,nsd_mean,nsd_std,dsc_p_vs_baseline,nsd_p_vs_baseline,flagged\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{}\n", to_string(r.method), r.n,
                       r.dsc.mean, r.dsc.std, r.nsd.mean, r.nsd.std, p_cell(r.dsc_test),
                       p_cell(r.nsd_test), r.flagged);
  }
  return out;
}

std::string ReportTable::to_text() const {
  auto metric = [](const stats::MeanStd& ms, const std::optional<stats::WilcoxonResult>& test) {
    const bool marked = test && test->p_value < kSignificanceLevel;
    return fmt::format("{:.1f} ± {:.1f}{}", 100.0 * ms.mean, 100.0 * ms.std, marked ? " ‡" : "");
  };
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"method", "n", "DSC", "NSD", "p(DSC)", "p(NSD)", "latency med ms",
                   "latency mean ms"});
  for (const auto& r : rows) {
    cells.push_back({std::string(to_string(r.method)), std::to_string(r.n), metric(r.dsc, r.dsc_test),
                     metric(r.nsd, r.nsd_test), p_cell(r.dsc_test), p_cell(r.nsd_test),
                     fmt::format("{:.3f}", r.latency_median_ms),
                     fmt::format("{:.3f}", r.latency_mean_ms)});
  }
  // Column widths in code points; the ± and ‡ glyphs are multi-byte.
  auto display_width = [](const std::string& s) {
    return static_cast<std::size_t>(
        std::count_if(s.begin(), s.end(), [](char c) { return (c & 0xC0) != 0x80; }));
  };
  std::vector<std::size_t> widths(cells.front().size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) widths[c] = std::max(widths[c], display_width(row[c]));
  }
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      const std::string& cell = cells[r][c];
      const std::string pad(widths[c] - display_width(cell), ' ');
      out += c == 0 ? cell + pad : "  " + pad + cell;
    }
    out += '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t c = 0; c < widths.size(); ++c) total += widths[c] + (c == 0 ? 0 : 2);
      out += std::string(total, '-') + '\n';
    }
  }
  out += fmt::format("‡ p < {} (two-sided Wilcoxon signed-rank vs baseline)\n", kSignificanceLevel);
  if (const auto* b = find(Method::kBaseline); b != nullptr && b->latency_median_ms > 0.0) {
    if (const auto* s = find(Method::kSimsam)) {
      out += fmt::format("latency ratio simsam/baseline (median): {:.2f}\n",
                         s->latency_median_ms / b->latency_median_ms);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<dataset::ManifestEntry> select_entries(const EvalConfig& cfg) {
  const auto manifest = dataset::load_manifest(cfg.manifest);
  spdlog::info("manifest {}: {} entries, {} rejected", cfg.manifest.string(), manifest.size(),
               manifest.rejected);
  switch (cfg.split) {
    case SplitChoice::kAll:
      return manifest.entries;
    case SplitChoice::kTest: {
      dataset::SplitSpec spec;
      spec.seed = cfg.split_seed;
      return dataset::split(manifest, spec).test.entries;
    }
    case SplitChoice::kManifest: {
      std::vector<dataset::ManifestEntry> out;
      for (const auto& e : manifest.entries) {
        if (e.split == "test") out.push_back(e);
      }
      return out;
    }
  }
  return {};
}

std::unique_ptr<seg::Segmenter> segmenter_for(const dataset::LoadedEntry& entry,
                                              const seg::BackendConfig& backend) {
  if (backend.kind == seg::BackendKind::kSynthetic && entry.scene) {
    return std::make_unique<seg::SyntheticSegmenter>(*entry.scene);
  }
  return seg::make_segmenter(backend);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

EvalResult evaluate(const EvalConfig& cfg) {
  cfg.validate();
  EvalResult result;
  result.entries = select_entries(cfg);
  if (result.entries.empty()) throw Error(ErrorCode::kConfig, "no entries to evaluate");
  const metrics::NsdConfig nsd_cfg{cfg.nsd_tolerance};
  const std::size_t n_methods = cfg.methods.size();
  result.records.resize(result.entries.size() * n_methods);

  pipeline::parallel_for(result.entries.size(), cfg.workers, [&](std::size_t i) {
    const dataset::LoadedEntry loaded = dataset::load_entry(result.entries[i]);
    const auto segmenter = segmenter_for(loaded, cfg.backend);
    for (std::size_t m = 0; m < n_methods; ++m) {
      const Method method = cfg.methods[m];
      const auto pcfg = method_config(method, cfg.k, mix_seed(cfg.seed, i));
      const auto start = std::chrono::steady_clock::now();
      const auto run = pipeline::run(loaded.image, loaded.box, pcfg, *segmenter);
      const double latency =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
              .count();

      EvalRecord& rec = result.records[i * n_methods + m];
      rec.entry_id = loaded.entry.id;
      rec.method = method;
      rec.dsc = metrics::dsc(run.final_mask, loaded.mask);
      rec.nsd = metrics::nsd(run.final_mask, loaded.mask, nsd_cfg);
      rec.latency_ms = latency;
      rec.encode_calls = run.counters.encode_calls;
      rec.decode_calls = run.counters.decode_calls;
      if (run.final_mask.empty()) rec.flags.emplace_back("pred_empty");
    }
    spdlog::debug("evaluated {}", loaded.entry.id);
  });

  result.table = summarize(result.records, cfg.methods);
  return result;
}

EvalResult cmd_eval(const EvalConfig& cfg) {
  EvalResult result = evaluate(cfg);
  fs::create_directories(cfg.out_dir);
  auto write_text = [&](const fs::path& path, const std::string& text) {
    io::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  };
  std::string jsonl;
  for (const auto& r : result.records) jsonl += r.to_json().dump() + '\n';
  write_text(cfg.out_dir / "records.jsonl", jsonl);
  write_text(cfg.out_dir / "report.csv", result.table.to_csv());
  write_text(cfg.out_dir / "report.txt", result.table.to_text());
  spdlog::info("wrote report for {} entries to {}", result.entries.size(), cfg.out_dir.string());
  return result;
}

// ---------------------------------------------------------------------------
// Single-image segmentation

BoundingBox parse_box(std::string_view text) {
  std::size_t values[4];
  std::size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    const auto end = i < 3 ? text.find(',', pos) : text.size();
    if (end == std::string_view::npos) break;
    const auto field = text.substr(pos, end - pos);
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), values[i]);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("bad box '{}'", text));
    }
    pos = end + 1;
    if (i == 3) {
      return BoundingBox{values[0], values[1], values[2], values[3]};
    }
  }
  throw Error(ErrorCode::kInvalidArgument,
              fmt::format("bad box '{}': expected r0,c0,r1,c1", text));
}

io::Image render_overlay(const io::Image& image, const BinaryMask& final_mask,
                         const BinaryMask& union_mask) {
  require_same_shape(image.shape, final_mask.shape());
  require_same_shape(image.shape, union_mask.shape());
  const io::Image gray = image.to_gray();
  const auto surface = metrics::extract_surface(final_mask).mask;
  io::Image out(image.shape, 3);
  auto blend = [](std::uint8_t base, int tint, int percent) {
    return static_cast<std::uint8_t>((base * (100 - percent) + tint * percent) / 100);
  };
  for (std::size_t i = 0; i < image.shape.pixel_count(); ++i) {
    std::uint8_t rgb[3] = {gray.pixels[i], gray.pixels[i], gray.pixels[i]};
    if (surface.test(i)) {
      rgb[0] = 255;
      rgb[1] = 0;
      rgb[2] = 0;
    } else if (final_mask.test(i)) {
      rgb[0] = blend(rgb[0], 0, 45);
      rgb[1] = blend(rgb[1], 255, 45);
      rgb[2] = blend(rgb[2], 0, 45);
    } else if (union_mask.test(i)) {
      rgb[0] = blend(rgb[0], 0, 35);
      rgb[1] = blend(rgb[1], 0, 35);
      rgb[2] = blend(rgb[2], 255, 35);
    }
    for (int c = 0; c < 3; ++c) out.pixels[i * 3 + static_cast<std::size_t>(c)] = rgb[c];
  }
  return out;
}

pipeline::RunResult cmd_segment(const SegmentOptions& opts) {
  const io::Image image = io::read_image(opts.image);
  BoundingBox box;
  if (opts.box) {
    box = *opts.box;
  } else if (opts.auto_box_from) {
    box = bbox_from_mask(io::read_mask_png(*opts.auto_box_from));
  } else {
    throw Error(ErrorCode::kInvalidArgument, "segment needs --box or --auto-box-from");
  }
  box.validate(image.shape);

  std::optional<fs::path> scene_path = opts.scene;
  if (!scene_path) {
    fs::path sidecar = opts.image;
    sidecar.replace_extension(".json");
    if (fs::is_regular_file(sidecar)) scene_path = sidecar;
  }
  std::unique_ptr<seg::Segmenter> segmenter;
  if (opts.backend.kind == seg::BackendKind::kSynthetic && scene_path) {
    segmenter = std::make_unique<seg::SyntheticSegmenter>(seg::load_scene(*scene_path));
  } else {
    segmenter = seg::make_segmenter(opts.backend);
  }

  pipeline::RunResult run = pipeline::run(image, box, opts.pipeline, *segmenter);

  fs::create_directories(opts.out_dir);
  io::write_mask_png(opts.out_dir / "mask.png", run.final_mask);
  io::write_mask_png(opts.out_dir / "union.png", run.union_mask);
  io::write_png(opts.out_dir / "overlay.png", render_overlay(image, run.final_mask, run.union_mask));
  if (opts.write_candidates) {
    const fs::path dir = opts.out_dir / "candidates";
    fs::remove_all(dir);
    for (std::size_t i = 0; i < run.candidates.size(); ++i) {
      io::write_mask_png(dir / fmt::format("candidate_{:02d}.png", i), run.candidates.bin_masks[i]);
    }
  }

  nlohmann::ordered_json j;
  j["box"] = {box.row_min, box.col_min, box.row_max, box.col_max};
  j["k"] = opts.pipeline.k;
  j["aggregation"] = pipeline::to_string(opts.pipeline.aggregation);
  j["clicks"] = pipeline::to_string(opts.pipeline.click_source);
  j["medoid_index"] = run.medoid_index ? nlohmann::ordered_json(*run.medoid_index)
                                       : nlohmann::ordered_json();
  j["encode_calls"] = run.counters.encode_calls;
  j["decode_calls"] = run.counters.decode_calls;
  j["timing_ms"] = {{"encode", run.timing.encode_ms},
                    {"baseline", run.timing.baseline_ms},
                    {"candidates", run.timing.candidates_ms},
                    {"aggregation", run.timing.aggregation_ms},
                    {"total", run.timing.total_ms()}};
  const std::string text = j.dump(2) + "\n";
  io::write_file(opts.out_dir / "result.json",
                 std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return run;
}

}  // namespace simsam::harness
