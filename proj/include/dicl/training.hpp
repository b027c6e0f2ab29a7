#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "dicl/flowdata.hpp"
#include "dicl/pyramid.hpp"

namespace dicl {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed parameter list; moment buffers follow the list order.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options = {});

  /// One update from the gradients currently stored on the parameters.
  void step();
  void zero_grad() { zero_grads(params_); }

  AdamOptions& options() { return options_; }
  std::size_t steps() const { return t_; }
  const ParamList& params() const { return params_; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

/// Raised when the loss or a gradient stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Forward in train mode, multi-level loss, backward, Adam step. Returns the
/// loss before the update. No update is applied when it throws.
double train_step(FlowModel& model, Adam& optimizer, const FlowBatch& batch,
                  const std::array<double, kPyramidLevels>& weights = kDefaultLossWeights);

/// Replaces every batch-norm running statistic with the plain average of the
/// batch statistics seen over `batches` (train-mode forwards, no updates to
/// parameters). Removes the lag and batch-1 noise of the moving average.
void recalibrate_batchnorm(FlowModel& model, const std::vector<FlowBatch>& batches);

/// Step schedule: lr * gamma^(number of milestones passed), milestones given
/// as fractions of the total iteration count.
double scheduled_lr(double base_lr, std::size_t iter, std::size_t total, const std::vector<double>& milestones,
                    double gamma);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: "DICLCKPT", u32 version, model config text, free-form
/// run config text, then every named parameter and buffer (name, u64 dims,
/// float64 data). Little-endian throughout.
void save_checkpoint(const std::filesystem::path& path, FlowModel& model, const std::string& run_config = {});

struct Checkpoint {
  ModelConfig config;
  std::string run_config;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint tensors into `model`; names and shapes must match exactly.
void load_into(const Checkpoint& ckpt, FlowModel& model);
/// Builds a model from the stored config and loads its tensors.
FlowModel load_model(const std::filesystem::path& path);

}  // namespace dicl
