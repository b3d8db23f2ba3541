#include "hyperfuse/config.hpp"

#include "json.hpp"

namespace hyperfuse {

using nlohmann::json;

namespace {

const char* fusion_name(BranchFusion f) { return f == BranchFusion::Sum ? "sum" : "concat"; }
const char* level_name(LevelFusion f) { return f == LevelFusion::Sum ? "sum" : "concat"; }

json to_json(const RunConfig& c) {
  const auto& s = c.data.synth;
  const auto& b = c.model.backbone;
  const auto& f = c.model.fusion;
  const auto& h = c.model.head;
  const auto& t = c.train;
  return {
      {"run", {{"dir", c.run_dir}}},
      {"data",
       {{"train", c.data.train},
        {"val", c.data.val},
        {"input", c.data.input},
        {"detections", c.data.detections},
        {"n_train", c.data.n_train},
        {"n_val", c.data.n_val},
        {"image_size", s.image_size},
        {"n_cells", s.n_cells},
        {"ratio_threshold", s.rule.ratio_threshold},
        {"neighbor_radius", s.rule.neighbor_radius},
        {"base_radius_min", s.base_radius_min},
        {"base_radius_max", s.base_radius_max},
        {"planted_fraction", s.planted_fraction},
        {"cyto_radius_min", s.cyto_radius_min},
        {"cyto_radius_max", s.cyto_radius_max},
        {"seed", s.seed},
        {"window", c.data.window},
        {"stride", c.data.stride},
        {"image_format", c.data.image_format}}},
      {"backbone",
       {{"in_channels", b.in_channels},
        {"channels", b.channels},
        {"mlf_enabled", b.mlf_enabled},
        {"branch_fusion", fusion_name(b.branch_fusion)},
        {"deformable", b.deformable}}},
      {"fusion",
       {{"enabled", f.enabled},
        {"grid_stride", f.grid_stride},
        {"lambda_quantile", f.lambda_quantile},
        {"lambda_pairs", f.lambda_pairs},
        {"lambda_seed", f.lambda_seed},
        {"append_coords", f.append_coords},
        {"coord_scale", f.coord_scale},
        {"head_width", f.head_width},
        {"level_fusion", level_name(f.level_fusion)}}},
      {"head",
       {{"num_classes", h.num_classes},
        {"score_thresh", h.score_thresh},
        {"nms_iou", h.nms_iou},
        {"w_obj", h.w_obj},
        {"w_cls", h.w_cls},
        {"w_box", h.w_box},
        {"route_small", h.route_small},
        {"route_medium", h.route_medium}}},
      {"train",
       {{"steps", t.steps},
        {"batch", t.batch},
        {"lr", t.lr},
        {"beta1", t.beta1},
        {"beta2", t.beta2},
        {"eps", t.eps},
        {"warmup", t.warmup},
        {"cosine", t.cosine},
        {"grad_clip", t.grad_clip},
        {"flip", t.flip},
        {"log_every", t.log_every},
        {"eval_every", t.eval_every},
        {"threads", t.threads},
        {"seed", t.seed}}},
      {"eval", {{"score_thresh", c.eval.score_thresh}, {"max_dets", c.eval.max_dets}, {"threads", c.eval.threads}}},
      {"ablate", {{"seeds", c.ablate.seeds}}},
  };
}

template <typename E>
E parse_enum(const json& v, const char* key) {
  const auto s = v.get<std::string>();
  if (s == "sum") return E::Sum;
  if (s == "concat") return E::Concat;
  throw ConfigError(std::string(key) + ": expected \"sum\" or \"concat\", got \"" + s + "\"");
}

RunConfig from_json(const json& j) {
  RunConfig c;
  c.run_dir = j["run"]["dir"].get<std::string>();
  const json& d = j["data"];
  c.data.train = d["train"].get<std::string>();
  c.data.val = d["val"].get<std::string>();
  c.data.input = d["input"].get<std::string>();
  c.data.detections = d["detections"].get<std::string>();
  c.data.n_train = d["n_train"].get<std::size_t>();
  c.data.n_val = d["n_val"].get<std::size_t>();
  auto& s = c.data.synth;
  s.image_size = d["image_size"].get<std::size_t>();
  s.n_cells = d["n_cells"].get<std::size_t>();
  s.rule.ratio_threshold = d["ratio_threshold"].get<double>();
  s.rule.neighbor_radius = d["neighbor_radius"].get<double>();
  s.base_radius_min = d["base_radius_min"].get<double>();
  s.base_radius_max = d["base_radius_max"].get<double>();
  s.planted_fraction = d["planted_fraction"].get<double>();
  s.cyto_radius_min = d["cyto_radius_min"].get<double>();
  s.cyto_radius_max = d["cyto_radius_max"].get<double>();
  s.seed = d["seed"].get<std::uint64_t>();
  c.data.window = d["window"].get<std::size_t>();
  c.data.stride = d["stride"].get<std::size_t>();
  c.data.image_format = d["image_format"].get<std::string>();
  if (c.data.image_format != "png" && c.data.image_format != "ppm")
    throw ConfigError("data.image_format: expected \"png\" or \"ppm\"");

  const json& b = j["backbone"];
  auto& bb = c.model.backbone;
  bb.in_channels = b["in_channels"].get<std::size_t>();
  if (b["channels"].size() != 5) throw ConfigError("backbone.channels: expected 5 widths");
  for (int i = 0; i < 5; ++i) bb.channels[i] = b["channels"][i].get<std::size_t>();
  bb.mlf_enabled = b["mlf_enabled"].get<bool>();
  bb.branch_fusion = parse_enum<BranchFusion>(b["branch_fusion"], "backbone.branch_fusion");
  bb.deformable = b["deformable"].get<bool>();

  const json& f = j["fusion"];
  auto& ff = c.model.fusion;
  ff.enabled = f["enabled"].get<bool>();
  ff.grid_stride = f["grid_stride"].get<std::size_t>();
  ff.lambda_quantile = f["lambda_quantile"].get<double>();
  ff.lambda_pairs = f["lambda_pairs"].get<std::size_t>();
  ff.lambda_seed = f["lambda_seed"].get<std::uint64_t>();
  ff.append_coords = f["append_coords"].get<bool>();
  ff.coord_scale = f["coord_scale"].get<double>();
  ff.head_width = f["head_width"].get<std::size_t>();
  ff.level_fusion = parse_enum<LevelFusion>(f["level_fusion"], "fusion.level_fusion");
  if (ff.grid_stride != 8 && ff.grid_stride != 16 && ff.grid_stride != 32)
    throw ConfigError("fusion.grid_stride: expected 8, 16 or 32");

  const json& h = j["head"];
  auto& hh = c.model.head;
  hh.num_classes = h["num_classes"].get<std::size_t>();
  hh.score_thresh = h["score_thresh"].get<double>();
  hh.nms_iou = h["nms_iou"].get<double>();
  hh.w_obj = h["w_obj"].get<double>();
  hh.w_cls = h["w_cls"].get<double>();
  hh.w_box = h["w_box"].get<double>();
  hh.route_small = h["route_small"].get<double>();
  hh.route_medium = h["route_medium"].get<double>();

  const json& t = j["train"];
  auto& tt = c.train;
  tt.steps = t["steps"].get<std::size_t>();
  tt.batch = t["batch"].get<std::size_t>();
  tt.lr = t["lr"].get<double>();
  tt.beta1 = t["beta1"].get<double>();
  tt.beta2 = t["beta2"].get<double>();
  tt.eps = t["eps"].get<double>();
  tt.warmup = t["warmup"].get<std::size_t>();
  tt.cosine = t["cosine"].get<bool>();
  tt.grad_clip = t["grad_clip"].get<double>();
  tt.flip = t["flip"].get<bool>();
  tt.log_every = t["log_every"].get<std::size_t>();
  tt.eval_every = t["eval_every"].get<std::size_t>();
  tt.threads = t["threads"].get<std::size_t>();
  tt.seed = t["seed"].get<std::uint64_t>();
  if (tt.batch == 0) throw ConfigError("train.batch must be >= 1");

  const json& e = j["eval"];
  c.eval.score_thresh = e["score_thresh"].get<double>();
  c.eval.max_dets = e["max_dets"].get<std::size_t>();
  c.eval.threads = e["threads"].get<std::size_t>();
  c.ablate.seeds = j["ablate"]["seeds"].get<std::vector<std::uint64_t>>();
  return c;
}

bool same_kind(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  return false;
}

void set_key(json& merged, const std::string& section, const std::string& key, const json& value) {
  if (!merged.contains(section)) throw ConfigError("unknown config section '" + section + "'");
  json& sec = merged[section];
  if (!sec.contains(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
  if (!same_kind(sec[key], value))
    throw ConfigError("config key '" + section + "." + key + "' expects a " + sec[key].type_name() + ", got " +
                      value.dump());
  sec[key] = value;
}

}  // namespace

std::string default_config_json() { return to_json(RunConfig{}).dump(2); }

RunConfig resolve_config(const std::string& json_text,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  json merged = to_json(RunConfig{});
  if (json_text.find_first_not_of(" \t\r\n") != std::string::npos) {
    json doc;
    try {
      doc = json::parse(json_text);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("malformed config JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [section, body] : doc.items()) {
      if (!merged.contains(section)) throw ConfigError("unknown config section '" + section + "'");
      if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
      for (const auto& [key, value] : body.items()) set_key(merged, section, key, value);
    }
  }
  for (const auto& [path, text] : overrides) {
    const auto dot = path.find('.');
    if (dot == std::string::npos) throw ConfigError("override '" + path + "' must look like section.key");
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    set_key(merged, path.substr(0, dot), path.substr(dot + 1), value);
  }
  try {
    return from_json(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config value: ") + e.what());
  }
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2); }

}  // namespace hyperfuse
