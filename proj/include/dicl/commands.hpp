#pragma once

// Subcommand implementations behind the `dicl` executable. Every command is a
// deterministic function of its RunConfig.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dicl/flowdata.hpp"
#include "dicl/pyramid.hpp"

namespace dicl {

/// Config file format: one `key = value` per line, `#` starts a comment.
/// Keys: seed, size (HxW), head, dap, context, context_levels, lr, iters,
/// batch, lr_milestones (comma-separated fractions of iters), lr_gamma,
/// bn_recalib (batches; 0 disables), loss_weights (5 comma-separated numbers), max_mag, motions
/// (comma-separated kinds), heldout, eval_every, out_dir, checkpoint,
/// predictor (model|oracle|zero), dataset (synthetic | translation:U,V),
/// bench_k, bench_window, bench_map (HxW).
struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t height = 64;
  std::size_t width = 64;
  ModelConfig model;
  double lr = 1e-3;
  std::size_t iters = 200;
  std::size_t batch = 1;
  std::vector<double> lr_milestones{0.5, 0.75};
  double lr_gamma = 0.3;
  std::size_t bn_recalib = 16;
  std::array<double, kPyramidLevels> loss_weights = kDefaultLossWeights;
  double max_mag = 8.0;
  std::vector<MotionKind> motions{MotionKind::translation, MotionKind::smooth};
  std::size_t heldout = 8;
  std::size_t eval_every = 50;
  std::filesystem::path out_dir = "runs";
  std::filesystem::path checkpoint;
  std::string predictor = "model";
  std::string dataset = "synthetic";
  std::uint64_t bench_k = 64;
  std::uint64_t bench_window = kWindow;
  std::size_t bench_h = 64;
  std::size_t bench_w = 96;

  /// Applies one key/value pair; throws std::invalid_argument on unknown keys
  /// or malformed values.
  void set(const std::string& key, const std::string& value);
  void load_file(const std::filesystem::path& path);
  void validate() const;
  /// Every key in canonical order, `key=value` per line.
  std::string to_text() const;
};

/// Child seeds derived from the run seed, so runs that differ only in model
/// settings see identical data and held-out sets.
struct SeedStreams {
  std::uint64_t data;
  std::uint64_t init;
  std::uint64_t heldout;
};
SeedStreams derive_seeds(std::uint64_t seed);

/// Training sample `index` of a run (kinds cycle through cfg.motions).
FlowSample training_sample(const RunConfig& cfg, std::uint64_t data_seed, std::size_t index);
/// The held-out set of a run as described by cfg.dataset.
std::vector<FlowSample> heldout_set(const RunConfig& cfg);

struct HeldoutPoint {
  std::size_t iter;
  double epe;
  double fl_all;
};

struct TrainResult {
  std::vector<double> losses;
  std::vector<HeldoutPoint> heldout;
  double initial_epe = 0.0;
  double final_epe = 0.0;
  double best_epe = 0.0;
  bool diverged = false;
  std::string diagnostic;
};

/// Trains on generated samples. Writes loss.csv (iter,loss), heldout.csv
/// (iter,epe,fl_all), model_final.ckpt, model_best.ckpt and, after a
/// divergence, model_last_good.ckpt into cfg.out_dir. `model` receives the
/// trained network when given.
TrainResult cmd_train(const RunConfig& cfg, std::ostream& log, std::unique_ptr<FlowModel>* model = nullptr);

struct EvalRow {
  std::string sample;
  double epe;
  double fl_all;
  std::optional<double> dpeak_median;
};

/// Per-sample rows followed by the aggregate row ("mean"). Writes eval.csv.
std::vector<EvalRow> cmd_eval(const RunConfig& cfg, std::ostream& log);

/// Median d_peak of the finest level over valid (min-pooled) pixels.
double heldout_dpeak_median(FlowModel& model, const std::vector<FlowSample>& samples);
/// Mean EPE / Fl-all of a model on samples.
EvalResult evaluate_model(FlowModel& model, const std::vector<FlowSample>& samples);

/// Writes `<prefix>.flo` and `<prefix>_color.png`; returns the flow.
Tensor cmd_infer(const RunConfig& cfg, const std::filesystem::path& img1, const std::filesystem::path& img2,
                 const std::filesystem::path& prefix, std::ostream& log);

struct AblationRow {
  CostHeadKind head;
  double initial_epe;
  double heldout_epe;
  double heldout_fl_all;
  std::string status;
};

/// Trains every cost head with identical seeds and budget into
/// cfg.out_dir/<head>, then writes ablation.csv.
std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, std::ostream& log);

/// Writes bench.csv (accounting table). With a checkpoint it also writes
/// dpeak_hist.csv and DAP kernel dumps under dap_level<k>/.
void cmd_bench(const RunConfig& cfg, std::ostream& log);

}  // namespace dicl
