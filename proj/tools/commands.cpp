#include "commands.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include "hyperfuse/checkpoint.hpp"
#include "hyperfuse/gradcheck.hpp"
#include "hyperfuse/hypergraph.hpp"
#include "json.hpp"

namespace hyperfuse::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path Context::out(const std::string& rel) {
  const fs::path p = run_dir / rel;
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  artifacts.push_back(rel);
  return p;
}

namespace {

constexpr std::uint64_t kValSeedTag = 0x76616c;

struct Split {
  std::vector<std::string> ids;
  std::vector<AnnotatedImage> images;
};

std::string index_id(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06zu", i);
  return buf;
}

SynthConfig split_synth(const RunConfig& cfg, bool val) {
  SynthConfig s = cfg.data.synth;
  if (val) s.seed ^= kValSeedTag;
  return s;
}

// Loads the annotation file, or generates the synthetic split when the path
// is empty.
Split load_split(const RunConfig& cfg, bool val) {
  const std::string& path = val ? cfg.data.val : cfg.data.train;
  Split s;
  if (!path.empty()) {
    Dataset d = load_dataset(path);
    s.ids = std::move(d.names);
    s.images = std::move(d.images);
    return s;
  }
  s.images = gen_synthetic_set(split_synth(cfg, val), val ? cfg.data.n_val : cfg.data.n_train);
  for (std::size_t i = 0; i < s.images.size(); ++i) s.ids.push_back(index_id(i));
  return s;
}

bool is_image_path(const fs::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
  return ext == ".png" || ext == ".ppm";
}

// data.input as either a single image or an annotation file.
Split load_input(const RunConfig& cfg) {
  if (cfg.data.input.empty()) throw UsageError("data.input is required (--data.input <image or annotations.jsonl>)");
  const fs::path p = cfg.data.input;
  if (is_image_path(p)) {
    Split s;
    s.ids.push_back(p.filename().string());
    s.images.push_back({read_image(p), {}, {}});
    return s;
  }
  Dataset d = load_dataset(p);
  return {std::move(d.names), std::move(d.images)};
}

fs::path input_image_path(const RunConfig& cfg, const std::string& id) {
  const fs::path p = cfg.data.input;
  return is_image_path(p) ? p : p.parent_path() / id;
}

template <typename R, typename F>
std::vector<R> parallel_map(std::size_t n, std::size_t threads, F fn) {
  std::vector<R> out(n);
  threads = std::max<std::size_t>(1, std::min(threads, n));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) out[i] = fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

std::vector<Detection> detect(const ModelParams<float>& params, const RunConfig& cfg, const Tensor<float>& image) {
  const std::size_t win = cfg.data.window;
  if (image.dim(1) <= win && image.dim(2) <= win) return predict(params, cfg.model, image, cfg.eval.score_thresh);
  return predict_tiled(params, cfg.model, image, cfg.eval.score_thresh, win, cfg.data.stride);
}

ModelParams<float> require_checkpoint(const Context& ctx) {
  if (ctx.checkpoint.empty()) throw UsageError(ctx.command + " needs --checkpoint <file>");
  return load_checkpoint<float>(ctx.checkpoint);
}

json box_json(const Box& b) { return {{"x1", b.x1}, {"y1", b.y1}, {"x2", b.x2}, {"y2", b.y2}}; }

json detections_json(const std::vector<Detection>& dets) {
  json arr = json::array();
  for (const auto& d : dets) {
    json j = box_json(d.box);
    j["class"] = d.class_id;
    j["score"] = d.score;
    arr.push_back(j);
  }
  return arr;
}

ImagePredictions read_detections(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read detections file " + path.string());
  ImagePredictions out;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(n) + ": ";
    try {
      const json j = json::parse(line);
      auto& dets = out[j.at("image").get<std::string>()];
      for (const auto& d : j.at("detections")) {
        Detection det;
        det.class_id = d.at("class").get<int>();
        det.score = d.at("score").get<double>();
        det.box = {d.at("x1").get<double>(), d.at("y1").get<double>(), d.at("x2").get<double>(), d.at("y2").get<double>()};
        if (!(det.box.x2 > det.box.x1 && det.box.y2 > det.box.y1)) throw DataError(where + "degenerate box");
        dets.push_back(det);
      }
    } catch (const json::exception& e) {
      throw DataError(where + e.what());
    }
  }
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
  if (!out) throw DataError("cannot write " + p.string());
}

json config_json(const RunConfig& cfg) { return json::parse(config_to_json(cfg)); }

json eval_json(const EvalResult& r) { return json::parse(eval_to_json(r)); }

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions o;
  o.num_classes = cfg.model.head.num_classes;
  o.max_dets = cfg.eval.max_dets;
  return o;
}

std::string safe_name(std::string id) {
  std::replace(id.begin(), id.end(), '/', '_');
  std::replace(id.begin(), id.end(), '\\', '_');
  return id;
}

void draw_rect(Tensor<float>& img, const Box& b, const float rgb[3]) {
  const long h = static_cast<long>(img.dim(1)), w = static_cast<long>(img.dim(2));
  auto clampi = [](long v, long lo, long hi) { return std::max(lo, std::min(v, hi)); };
  const long x1 = clampi(std::lround(b.x1), 0, w - 1), x2 = clampi(std::lround(b.x2) - 1, 0, w - 1);
  const long y1 = clampi(std::lround(b.y1), 0, h - 1), y2 = clampi(std::lround(b.y2) - 1, 0, h - 1);
  auto put = [&](long y, long x) {
    for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
  };
  for (long x = x1; x <= x2; ++x) put(y1, x), put(y2, x);
  for (long y = y1; y <= y2; ++y) put(y, x1), put(y, x2);
}

struct TrainOutcome {
  TrainResult result;
  EvalResult eval;
};

TrainOutcome train_and_log(const RunConfig& cfg, const Split& train, const Split& val, const fs::path& log_path,
                           const std::string& label) {
  std::ofstream log(log_path);
  log << json{{"event", "config"}, {"config", config_json(cfg)}}.dump() << "\n";
  const auto t0 = std::chrono::steady_clock::now();
  TrainOutcome o;
  o.result = train_model(cfg.model, cfg.train, train.images, val.images, [&](const TrainLogEntry& e) {
    json j{{"event", "step"},     {"step", e.step},       {"lr", e.lr},         {"loss", e.loss.total},
           {"obj", e.loss.obj},   {"cls", e.loss.cls},    {"box", e.loss.box},  {"positives", e.loss.positives}};
    if (e.val_ap50 >= 0) j["val_ap50"] = e.val_ap50;
    log << j.dump() << "\n";
    log.flush();
    const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::fprintf(stderr, "[%s] step %zu/%zu loss %.4f%s (%.0fs)\n", label.c_str(), e.step, cfg.train.steps,
                 e.loss.total, e.val_ap50 >= 0 ? (" val AP.5 " + std::to_string(e.val_ap50)).c_str() : "", el);
  });
  o.eval = evaluate_model(o.result.params, cfg.model, val.images, cfg.eval.score_thresh, cfg.train.threads);
  log << json{{"event", "final"}, {"eval", eval_json(o.eval)}}.dump() << "\n";
  return o;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

int cmd_gen(Context& ctx) {
  for (bool val : {false, true}) {
    const std::string split = val ? "val" : "train";
    const SynthConfig sc = split_synth(ctx.cfg, val);
    const auto images = gen_synthetic_set(sc, val ? ctx.cfg.data.n_val : ctx.cfg.data.n_train);
    save_dataset(ctx.run_dir / "data", split + ".jsonl", split + "_", images, ctx.cfg.data.image_format);
    ctx.artifacts.push_back("data/" + split + ".jsonl");
    // Stored geometry lets the label rule be recomputed post hoc.
    std::ofstream cells(ctx.out("data/" + split + "_cells.jsonl"));
    std::size_t abnormal = 0, total = 0;
    for (std::size_t i = 0; i < images.size(); ++i) {
      json arr = json::array();
      for (const auto& c : images[i].cells) {
        arr.push_back({{"cx", c.cx},
                       {"cy", c.cy},
                       {"cyto_a", c.cyto_a},
                       {"cyto_b", c.cyto_b},
                       {"cyto_angle", c.cyto_angle},
                       {"nucleus_dx", c.nucleus_dx},
                       {"nucleus_dy", c.nucleus_dy},
                       {"nucleus_a", c.nucleus_a},
                       {"nucleus_b", c.nucleus_b},
                       {"nucleus_angle", c.nucleus_angle},
                       {"planted", c.planted},
                       {"label", c.label}});
        abnormal += c.label == kAbnormal;
        ++total;
      }
      cells << json{{"index", i}, {"seed", synthetic_image_seed(sc.seed, i)}, {"cells", arr}}.dump() << "\n";
    }
    std::printf("%s: %zu images, %zu cells (%zu abnormal) -> %s\n", split.c_str(), images.size(), total, abnormal,
                (ctx.run_dir / "data" / (split + ".jsonl")).string().c_str());
  }
  return 0;
}

int cmd_tile(Context& ctx) {
  const Split in = load_input(ctx.cfg);
  std::vector<AnnotationRecord> records;
  std::ofstream index(ctx.out("tiles/tile_index.jsonl"));
  for (std::size_t i = 0; i < in.images.size(); ++i) {
    const std::string stem = fs::path(safe_name(in.ids[i])).stem().string();
    for (const Tile& t : tile_image(in.images[i], ctx.cfg.data.window, ctx.cfg.data.stride)) {
      char name[64];
      std::snprintf(name, sizeof name, "_x%zu_y%zu.", t.x, t.y);
      const std::string rel = "images/" + stem + name + ctx.cfg.data.image_format;
      write_image(ctx.run_dir / "tiles" / rel, t.patch.image);
      records.push_back({rel, t.patch.gts});
      index << json{{"tile", rel}, {"source", in.ids[i]}, {"x", t.x}, {"y", t.y}}.dump() << "\n";
    }
  }
  write_annotations(ctx.out("tiles/tiles.jsonl"), records);
  std::printf("%zu images -> %zu tiles of %zux%zu\n", in.images.size(), records.size(), ctx.cfg.data.window,
              ctx.cfg.data.window);
  return 0;
}

int cmd_train(Context& ctx) {
  const Split train = load_split(ctx.cfg, false);
  const Split val = load_split(ctx.cfg, true);
  auto o = train_and_log(ctx.cfg, train, val, ctx.out("train_log.jsonl"), "train");
  save_checkpoint(o.result.params, ctx.out("model.hgckpt"));
  write_text(ctx.out("config.json"), config_to_json(ctx.cfg) + "\n");
  write_text(ctx.out("metrics.json"), eval_json(o.eval).dump(2) + "\n");
  std::printf("%s", eval_table(o.eval).c_str());
  return 0;
}

int cmd_eval(Context& ctx) {
  const Split gt = load_split(ctx.cfg, true);
  ImageGroundTruth gts;
  for (std::size_t i = 0; i < gt.images.size(); ++i) gts[gt.ids[i]] = gt.images[i].gts;
  ImagePredictions preds;
  if (!ctx.checkpoint.empty()) {
    const auto params = require_checkpoint(ctx);
    auto dets = parallel_map<std::vector<Detection>>(gt.images.size(), ctx.cfg.eval.threads, [&](std::size_t i) {
      return detect(params, ctx.cfg, gt.images[i].image);
    });
    for (std::size_t i = 0; i < dets.size(); ++i) preds[gt.ids[i]] = std::move(dets[i]);
  } else if (!ctx.cfg.data.detections.empty()) {
    preds = read_detections(ctx.cfg.data.detections);
  } else {
    throw UsageError("eval needs --checkpoint <file> or --data.detections <file>");
  }
  const EvalResult r = evaluate(preds, gts, eval_options(ctx.cfg));
  write_text(ctx.out("eval.json"), eval_json(r).dump(2) + "\n");
  write_text(ctx.out("eval.txt"), eval_table(r));
  std::printf("%s", eval_table(r).c_str());
  return 0;
}

int cmd_infer(Context& ctx) {
  const auto params = require_checkpoint(ctx);
  const Split in = load_input(ctx.cfg);
  auto dets = parallel_map<std::vector<Detection>>(in.images.size(), ctx.cfg.eval.threads,
                                                   [&](std::size_t i) { return detect(params, ctx.cfg, in.images[i].image); });
  std::ofstream out(ctx.out("detections.jsonl"));
  std::size_t total = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    out << json{{"image", in.ids[i]}, {"detections", detections_json(dets[i])}}.dump() << "\n";
    total += dets[i].size();
  }
  std::printf("%zu images, %zu detections -> %s\n", dets.size(), total, (ctx.run_dir / "detections.jsonl").string().c_str());
  return 0;
}

int cmd_render(Context& ctx) {
  const Split in = load_input(ctx.cfg);
  ImagePredictions preds;
  if (!ctx.cfg.data.detections.empty()) preds = read_detections(ctx.cfg.data.detections);
  static const float kGt[3] = {0.1f, 0.9f, 0.1f};
  static const float kDet[2][3] = {{0.1f, 0.4f, 1.0f}, {1.0f, 0.15f, 0.1f}};
  for (std::size_t i = 0; i < in.images.size(); ++i) {
    const auto it = preds.find(in.ids[i]);
    const bool has_dets = it != preds.end() && !it->second.empty();
    const fs::path dst = ctx.out("render/" + safe_name(in.ids[i]));
    if (in.images[i].gts.empty() && !has_dets) {
      fs::copy_file(input_image_path(ctx.cfg, in.ids[i]), dst, fs::copy_options::overwrite_existing);
      continue;
    }
    Tensor<float> img = in.images[i].image;
    for (const auto& g : in.images[i].gts) draw_rect(img, g.box, kGt);
    if (has_dets)
      for (const auto& d : it->second) draw_rect(img, d.box, kDet[d.class_id == kAbnormal]);
    write_image(dst, img);
  }
  std::printf("rendered %zu images -> %s\n", in.images.size(), (ctx.run_dir / "render").string().c_str());
  return 0;
}

int cmd_hgdebug(Context& ctx) {
  if (ctx.cfg.data.input.empty()) throw UsageError("hg-debug needs --data.input <features.json or image>");
  const fs::path p = ctx.cfg.data.input;
  const auto& fc = ctx.cfg.model.fusion;
  const LambdaRule rule{fc.lambda_quantile, fc.lambda_pairs, fc.lambda_seed, 1e-12};
  Hypergraph hg;
  double lambda = 0;
  if (is_image_path(p)) {
    if (!fc.enabled) throw UsageError("hg-debug on an image needs fusion.enabled = true");
    const auto params = ctx.checkpoint.empty() ? init_model<float>(ctx.cfg.model, ctx.cfg.train.seed) : require_checkpoint(ctx);
    Tape<float> tape;
    ParamBinding<float> pb(tape, params, false);
    auto out = model_forward(tape.leaf(read_image(p)), pb, ctx.cfg.model);
    hg = out.hyper->hypergraph;
    lambda = out.hyper->lambda;
  } else {
    std::ifstream in(p);
    if (!in) throw DataError("cannot read " + p.string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError(p.string() + ": " + e.what());
    }
    if (!doc.contains("features") || !doc["features"].is_array() || doc["features"].empty())
      throw DataError(p.string() + ": expected {\"features\": [[...], ...], \"lambda\": optional}");
    const auto& rows = doc["features"];
    const std::size_t n = rows.size(), c = rows[0].size();
    Tensor<double> feats(Shape{n, c});
    for (std::size_t i = 0; i < n; ++i) {
      if (!rows[i].is_array() || rows[i].size() != c) throw DataError(p.string() + ": feature rows differ in length");
      for (std::size_t k = 0; k < c; ++k) feats.at(i, k) = rows[i][k].get<double>();
    }
    lambda = doc.contains("lambda") ? doc["lambda"].get<double>() : adaptive_lambda(feats, rule);
    hg = build_hypergraph(feats, lambda);
  }
  auto histogram = [](const std::vector<std::size_t>& deg) {
    std::map<std::size_t, std::size_t> h;
    for (auto d : deg) ++h[d];
    json j = json::object();
    for (auto [d, count] : h) j[std::to_string(d)] = count;
    return j;
  };
  json report{{"num_vertices", hg.num_vertices()},
              {"num_edges", hg.num_edges()},
              {"lambda", lambda},
              {"vertex_degree_histogram", histogram(hg.vertex_degree())},
              {"edge_degree_histogram", histogram(hg.edge_degree())}};
  if (hg.num_edges() <= 64) {
    json edges = json::array();
    for (std::size_t e = 0; e < hg.num_edges(); ++e) {
      auto m = hg.members(e);
      edges.push_back(std::vector<std::uint32_t>(m.begin(), m.end()));
    }
    report["edges"] = edges;
  }
  write_text(ctx.out("hgdebug.json"), report.dump(2) + "\n");
  std::printf("%s\n", report.dump(2).c_str());
  return 0;
}

int cmd_gradcheck(Context& ctx) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradient_suite(ctx.cfg.train.seed);
  bool ok = true;
  json arr = json::array();
  for (const auto& r : results) {
    std::printf("%-4s %-30s entries %6zu  max rel err %.3e\n", r.passed ? "ok" : "FAIL", r.name.c_str(), r.checked,
                r.max_rel_error);
    ok = ok && r.passed;
    arr.push_back({{"name", r.name}, {"checked", r.checked}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s: %zu checks in %.1fs\n", ok ? "all passed" : "FAILED", results.size(), secs);
  write_text(ctx.out("gradcheck.json"), json{{"passed", ok}, {"seconds", secs}, {"checks", arr}}.dump(2) + "\n");
  return ok ? 0 : 1;
}

int cmd_ablate(Context& ctx) {
  const Split train = load_split(ctx.cfg, false);
  const Split val = load_split(ctx.cfg, true);
  if (ctx.cfg.ablate.seeds.empty()) throw UsageError("ablate.seeds is empty");
  struct Row {
    const char* name;
    bool mlf, fusion;
  };
  const Row rows[4] = {{"baseline", false, false}, {"+MLF-SNet", true, false}, {"+CLFFS-HC", false, true}, {"both", true, true}};
  json out_rows = json::array();
  std::string table = "config        AP      AP.5    AR\n";
  for (const Row& row : rows) {
    std::vector<double> ap, ap50, ar;
    json per_seed = json::array();
    for (auto seed : ctx.cfg.ablate.seeds) {
      RunConfig cfg = ctx.cfg;
      cfg.model.backbone.mlf_enabled = row.mlf;
      cfg.model.fusion.enabled = row.fusion;
      cfg.train.seed = seed;
      const std::string label = std::string(row.name) + " seed " + std::to_string(seed);
      const std::string stem = "ablate/" + safe_name(row.name) + "_seed" + std::to_string(seed);
      auto o = train_and_log(cfg, train, val, ctx.out(stem + ".jsonl"), label);
      ap.push_back(o.eval.ap);
      ap50.push_back(o.eval.ap50);
      ar.push_back(o.eval.ar);
      const auto& log = o.result.log;
      per_seed.push_back({{"seed", seed},
                          {"ap", o.eval.ap},
                          {"ap50", o.eval.ap50},
                          {"ar", o.eval.ar},
                          {"first_loss", log.empty() ? 0.0 : log.front().loss.total},
                          {"last_loss", log.empty() ? 0.0 : log.back().loss.total}});
    }
    const double m_ap = median(ap), m_ap50 = median(ap50), m_ar = median(ar);
    out_rows.push_back({{"name", row.name},
                        {"mlf_enabled", row.mlf},
                        {"fusion_enabled", row.fusion},
                        {"ap", m_ap},
                        {"ap50", m_ap50},
                        {"ar", m_ar},
                        {"per_seed", per_seed}});
    char line[128];
    std::snprintf(line, sizeof line, "%-12s  %.4f  %.4f  %.4f\n", row.name, m_ap, m_ap50, m_ar);
    table += line;
  }
  write_text(ctx.out("ablation.json"),
             json{{"seeds", ctx.cfg.ablate.seeds}, {"statistic", "median"}, {"rows", out_rows}}.dump(2) + "\n");
  write_text(ctx.out("ablation.txt"), table);
  std::printf("%s", table.c_str());
  return 0;
}

void write_manifest(const Context& ctx, int exit_code) {
  const fs::path path = ctx.run_dir / "manifest.json";
  json m = json::object();
  if (fs::exists(path)) {
    std::ifstream in(path);
    m = json::parse(in, nullptr, false);
    if (m.is_discarded() || !m.is_object()) m = json::object();
  }
  m["commands"][ctx.command] = {{"config", config_json(ctx.cfg)}, {"artifacts", ctx.artifacts}, {"exit_code", exit_code}};
  std::ofstream(path) << m.dump(2) << "\n";
}

}  // namespace hyperfuse::cli
