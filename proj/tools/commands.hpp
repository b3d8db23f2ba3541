#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperfuse/config.hpp"

namespace hyperfuse::cli {

// Maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Context {
  std::string command;
  RunConfig cfg;
  std::filesystem::path run_dir;
  std::string checkpoint;  // --checkpoint
  std::vector<std::string> artifacts;

  std::filesystem::path out(const std::string& rel);
};

int cmd_gen(Context& ctx);
int cmd_tile(Context& ctx);
int cmd_train(Context& ctx);
int cmd_eval(Context& ctx);
int cmd_infer(Context& ctx);
int cmd_render(Context& ctx);
int cmd_hgdebug(Context& ctx);
int cmd_gradcheck(Context& ctx);
int cmd_ablate(Context& ctx);

void write_manifest(const Context& ctx, int exit_code);

}  // namespace hyperfuse::cli
