// Command-line entry point: partdisc <synth|sim|train|infer|eval|align> [options]

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "partdisc/commands.hpp"
#include "partdisc/config.hpp"
#include "partdisc/errors.hpp"

namespace {

struct Flags {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<long long> seed;
  std::optional<int> threads;
  std::string out_dir, manifest, checkpoint;
  bool print_config = false;
  bool dump = false;
};

partdisc::RunConfig resolve(const Flags& f) {
  partdisc::RunConfig c;
  if (!f.config_file.empty()) partdisc::load_config_file(c, f.config_file);
  for (const std::string& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw partdisc::UsageError("--set expects key=value, got " + s);
    c.set(s.substr(0, eq), s.substr(eq + 1));
  }
  if (f.seed) c.train.seed = *f.seed;
  if (f.threads) c.threads = *f.threads;
  if (!f.out_dir.empty()) c.out_dir = f.out_dir;
  if (!f.manifest.empty()) c.manifest = f.manifest;
  if (!f.checkpoint.empty()) c.checkpoint = f.checkpoint;
  if (c.threads < 1) throw partdisc::UsageError("threads must be >= 1");
  return c;
}

int run(const std::string& sub, const Flags& flags) {
  const partdisc::RunConfig c = resolve(flags);
  if (flags.print_config) {
    std::cout << c.to_toml();
    return 0;
  }
  if (sub == "synth") {
    const auto m = partdisc::cmd_synth(c);
    std::cout << "wrote " << m.entries.size() << " images to " << c.out_dir << "\n";
  } else if (sub == "sim") {
    partdisc::cmd_sim(c);
    std::cout << "wrote " << c.init_checkpoint_path().string() << " and "
              << c.similarity_dir().string() << "\n";
  } else if (sub == "train") {
    const auto r = partdisc::cmd_train(c);
    for (const auto& e : r.log) {
      std::cout << "epoch " << e.epoch << " loss " << e.mean_loss << " lr " << e.learning_rate
                << " fallbacks " << e.fallbacks << "/" << e.alignments << "\n";
    }
    std::cout << "wrote " << c.checkpoint_path().string() << "\n";
  } else if (sub == "infer") {
    partdisc::cmd_infer(c);
    std::cout << "wrote " << c.detections_path().string() << "\n";
  } else if (sub == "eval") {
    const auto report = partdisc::cmd_eval(c);
    std::cout << "mAP@IoU " << report["iou"]["mAP"].dump() << "  mAP@L2 "
              << report["l2"]["mAP"].dump() << "\n";
  } else if (sub == "align") {
    const auto doc = partdisc::cmd_align(c, flags.dump);
    std::cout << "aligned " << doc.size() << " images\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised part discovery on frozen backbone features"};
  app.require_subcommand(1);
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config_file, "flat TOML config file");
    sub->add_option("--set", flags.sets, "override one config key (key=value), repeatable");
    sub->add_option("--seed", flags.seed, "seed for all randomness");
    sub->add_option("--threads", flags.threads, "worker threads (1 = deterministic)");
    sub->add_option("--out-dir", flags.out_dir, "artifact directory");
    sub->add_option("--manifest", flags.manifest, "dataset manifest JSON");
    sub->add_option("--checkpoint", flags.checkpoint, "part layer checkpoint");
    sub->add_flag("--print-config", flags.print_config, "print the resolved config and exit");
  };
  const std::vector<std::pair<std::string, std::string>> subs = {
      {"synth", "generate a synthetic dataset"},
      {"sim", "cluster init and similarity cache"},
      {"train", "train the part layer"},
      {"infer", "detect parts"},
      {"eval", "score detections against the manifest annotations"},
      {"align", "estimate pool alignments"},
  };
  for (const auto& [name, help] : subs) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    if (name == "align") sub->add_flag("--dump", flags.dump, "write alignments.json");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  const std::string sub = app.get_subcommands().front()->get_name();
  try {
    return run(sub, flags);
  } catch (const partdisc::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const partdisc::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const partdisc::InvariantError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
