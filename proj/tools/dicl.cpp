// dicl: train / eval / infer / ablate / bench for the DICL flow pipeline.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "dicl/commands.hpp"
#include "dicl/training.hpp"

namespace {

struct SharedFlags {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::optional<std::string> out_dir;
  std::optional<std::string> dap;
  std::optional<std::string> head;
  std::optional<std::string> size;
  std::optional<std::size_t> iters;
  std::optional<double> lr;
  std::optional<std::string> checkpoint;
  std::vector<std::string> overrides;
};

void add_shared(CLI::App& app, SharedFlags& f) {
  app.add_option("--seed", f.seed, "Run seed");
  app.add_option("--config", f.config, "key = value config file")->check(CLI::ExistingFile);
  app.add_option("--out-dir", f.out_dir, "Output directory");
  app.add_option("--dap", f.dap, "Displacement-aware projection")->check(CLI::IsMember({"on", "off"}));
  app.add_option("--head", f.head, "Cost head")
      ->check(CLI::IsMember({"dot", "cosine", "mlp3", "reduced-dicl", "dicl"}));
  app.add_option("--size", f.size, "Image size HxW");
  app.add_option("--iters", f.iters, "Training iterations");
  app.add_option("--lr", f.lr, "Adam learning rate");
  app.add_option("--checkpoint", f.checkpoint, "Checkpoint to load");
  app.add_option("--set", f.overrides, "Extra config override key=value (repeatable)");
}

// File values first, then flags.
dicl::RunConfig resolve(const SharedFlags& f) {
  dicl::RunConfig cfg;
  if (!f.config.empty()) cfg.load_file(f.config);
  for (const auto& kv : f.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.out_dir) cfg.out_dir = *f.out_dir;
  if (f.dap) cfg.set("dap", *f.dap);
  if (f.head) cfg.set("head", *f.head);
  if (f.size) cfg.set("size", *f.size);
  if (f.iters) cfg.iters = *f.iters;
  if (f.lr) cfg.lr = *f.lr;
  if (f.checkpoint) cfg.checkpoint = *f.checkpoint;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DICL optical flow: training, evaluation, inference, ablation and accounting"};
  app.require_subcommand(1);

  SharedFlags train_f, eval_f, infer_f, ablate_f, bench_f;
  auto* train = app.add_subcommand("train", "Train on synthetic flow and write checkpoints and loss curves");
  add_shared(*train, train_f);
  auto* eval = app.add_subcommand("eval", "Score a checkpoint (or oracle/zero predictor) on a held-out set");
  add_shared(*eval, eval_f);
  auto* infer = app.add_subcommand("infer", "Estimate flow between two PNG frames");
  add_shared(*infer, infer_f);
  std::string img1, img2, prefix;
  infer->add_option("img1", img1, "First frame (PNG)")->required()->check(CLI::ExistingFile);
  infer->add_option("img2", img2, "Second frame (PNG)")->required()->check(CLI::ExistingFile);
  infer->add_option("prefix", prefix, "Output prefix for .flo and _color.png")->required();
  auto* ablate = app.add_subcommand("ablate", "Train every cost head with one seed and budget");
  add_shared(*ablate, ablate_f);
  auto* bench = app.add_subcommand("bench", "Per-layer parameter and memory accounting");
  add_shared(*bench, bench_f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const dicl::TrainResult r = dicl::cmd_train(resolve(train_f), std::cout);
      if (r.diverged) {
        std::cerr << "error: " << r.diagnostic << " (last good checkpoint saved)\n";
        return 2;
      }
      std::cout << "held-out EPE " << r.initial_epe << " -> " << r.final_epe << " (best " << r.best_epe << ")\n";
    } else if (*eval) {
      dicl::cmd_eval(resolve(eval_f), std::cout);
    } else if (*infer) {
      dicl::cmd_infer(resolve(infer_f), img1, img2, prefix, std::cout);
    } else if (*ablate) {
      for (const auto& row : dicl::cmd_ablate(resolve(ablate_f), std::cout)) {
        std::cout << dicl::to_string(row.head) << ": held-out EPE " << row.heldout_epe << " (" << row.status << ")\n";
      }
    } else if (*bench) {
      dicl::cmd_bench(resolve(bench_f), std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
