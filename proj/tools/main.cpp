#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "hyperfuse/checkpoint.hpp"

using namespace hyperfuse;

namespace {

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw cli::UsageError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Leftover arguments are "--section.key value" or "--section.key=value".
std::vector<std::pair<std::string, std::string>> parse_overrides(const std::vector<std::string>& rest) {
  std::vector<std::pair<std::string, std::string>> out;
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const std::string& a = rest[i];
    if (a.rfind("--", 0) != 0 || a.find('.') == std::string::npos)
      throw cli::UsageError("unexpected argument '" + a + "' (overrides look like --section.key value)");
    const auto eq = a.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(a.substr(2, eq - 2), a.substr(eq + 1));
    } else {
      if (i + 1 >= rest.size()) throw cli::UsageError("override " + a + " needs a value");
      out.emplace_back(a.substr(2), rest[++i]);
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hyperfuse: hypergraph cross-level fusion detector for cell images"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  std::string config_path, checkpoint;
  std::uint64_t seed = 0;
  bool print_config = false;

  const std::vector<std::pair<std::string, std::function<int(cli::Context&)>>> commands{
      {"gen", cli::cmd_gen},         {"tile", cli::cmd_tile},         {"train", cli::cmd_train},
      {"eval", cli::cmd_eval},       {"infer", cli::cmd_infer},       {"render", cli::cmd_render},
      {"hg-debug", cli::cmd_hgdebug}, {"gradcheck", cli::cmd_gradcheck}, {"ablate", cli::cmd_ablate},
  };
  const std::map<std::string, std::string> help{
      {"gen", "Generate the synthetic train/val datasets"},
      {"tile", "Cut images into window x window patches"},
      {"train", "Train a model and write a checkpoint plus JSONL log"},
      {"eval", "Evaluate a checkpoint or a detections file against ground truth"},
      {"infer", "Run detection on an image or annotation file"},
      {"render", "Draw ground-truth and detection boxes onto image copies"},
      {"hg-debug", "Report hypergraph statistics for a feature file or an image"},
      {"gradcheck", "Run the finite-difference gradient suite"},
      {"ablate", "Train and evaluate the four ablation configurations"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, help.at(name));
    sub->allow_extras();
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--seed", seed, "Sets train.seed and data.seed");
    sub->add_option("--checkpoint", checkpoint, "Checkpoint file (eval, infer, hg-debug)");
    sub->add_flag("--print-config", print_config, "Print the resolved config and exit");
    subs[name] = sub;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (const auto& [name, fn] : commands) {
    CLI::App* sub = subs.at(name);
    if (!sub->parsed()) continue;
    cli::Context ctx;
    ctx.command = name;
    try {
      auto overrides = parse_overrides(sub->remaining());
      if (sub->count("--seed")) {
        overrides.emplace_back("train.seed", std::to_string(seed));
        overrides.emplace_back("data.seed", std::to_string(seed));
      }
      ctx.cfg = resolve_config(config_path.empty() ? std::string() : read_text(config_path), overrides);
      if (print_config) {
        std::cout << config_to_json(ctx.cfg) << "\n";
        return 0;
      }
      ctx.run_dir = ctx.cfg.run_dir;
      ctx.checkpoint = checkpoint;
      std::filesystem::create_directories(ctx.run_dir);
      const int code = fn(ctx);
      cli::write_manifest(ctx, code);
      return code;
    } catch (const cli::UsageError& e) {
      std::cerr << "error: " << e.what() << "\n";
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
    } catch (const DataError& e) {
      std::cerr << "data error: " << e.what() << "\n";
    } catch (const CheckpointError& e) {
      std::cerr << "checkpoint error: " << e.what() << "\n";
    } catch (const EvalError& e) {
      std::cerr << "eval error: " << e.what() << "\n";
    } catch (const std::invalid_argument& e) {
      std::cerr << "invalid input: " << e.what() << "\n";
    } catch (const std::filesystem::filesystem_error& e) {
      std::cerr << "file error: " << e.what() << "\n";
    }
    return 2;
  }
  return 2;
}
