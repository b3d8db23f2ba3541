#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hyperfuse/data.hpp"
#include "hyperfuse/model.hpp"
#include "hyperfuse/train.hpp"

namespace hyperfuse {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataSection {
  std::string train;  // annotation JSONL paths; empty means "generate"
  std::string val;
  std::string input;  // image or annotation file for infer / render / hg-debug
  std::string detections;
  SynthConfig synth;
  std::size_t n_train = 200;
  std::size_t n_val = 50;
  std::size_t window = 640;
  std::size_t stride = 512;
  std::string image_format = "png";
};

struct EvalSection {
  double score_thresh = 0.01;
  std::size_t max_dets = 100;
  std::size_t threads = 1;
};

struct AblateSection {
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

struct RunConfig {
  std::string run_dir = "run";
  DataSection data;
  ModelConfig model;
  TrainConfig train;
  EvalSection eval;
  AblateSection ablate;
};

// Every key with its default value, as a JSON document.
std::string default_config_json();

// Merges a JSON document (may be empty) and "section.key" -> value overrides
// over the defaults. Unknown sections or keys and type mismatches are errors.
// Override values are parsed as JSON, falling back to a plain string.
RunConfig resolve_config(const std::string& json_text,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

std::string config_to_json(const RunConfig& cfg);

}  // namespace hyperfuse
