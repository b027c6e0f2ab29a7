#include "dicl/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace dicl {

Adam::Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
  for (const auto& p : params_.params) {
    m_.push_back(Tensor::zeros_like(p.var->value));
    v_.push_back(Tensor::zeros_like(p.var->value));
  }
}

void Adam::step() {
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.params.size(); ++i) {
    Node& node = *params_.params[i].var;
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < node.value.numel(); ++j) {
      const double g = node.grad[j];
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      node.value[j] -= options_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.eps);
    }
  }
}

double train_step(FlowModel& model, Adam& optimizer, const FlowBatch& batch,
                  const std::array<double, kPyramidLevels>& weights) {
  optimizer.zero_grad();
  double loss_value = 0.0;
  try {
    const PyramidOutput out = model.forward(batch.img1, batch.img2, Mode::train);
    const Var loss = multi_level_loss(out, batch.gt_flow, batch.valid, weights);
    loss_value = loss->value[0];
    backward(loss);
  } catch (const NonFiniteError& e) {
    throw TrainingDiverged(std::string("non-finite value during step ") + std::to_string(optimizer.steps() + 1) +
                           ": " + e.what());
  }
  for (const auto& p : optimizer.params().params) {
    if (!p.var->grad.all_finite()) {
      throw TrainingDiverged("non-finite gradient for " + p.name + " at step " +
                             std::to_string(optimizer.steps() + 1));
    }
  }
  optimizer.step();
  return loss_value;
}

void recalibrate_batchnorm(FlowModel& model, const std::vector<FlowBatch>& batches) {
  if (batches.empty()) return;
  const ParamList list = model.parameters();
  std::vector<double> saved;
  for (BatchNormState* s : list.norms) saved.push_back(s->momentum);
  NoGradGuard guard;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    // Momentum 1/(i+1) turns the moving average into a running mean.
    for (BatchNormState* s : list.norms) s->momentum = 1.0 / static_cast<double>(i + 1);
    model.forward(batches[i].img1, batches[i].img2, Mode::train);
  }
  for (std::size_t j = 0; j < list.norms.size(); ++j) list.norms[j]->momentum = saved[j];
}

double scheduled_lr(double base_lr, std::size_t iter, std::size_t total, const std::vector<double>& milestones,
                    double gamma) {
  double lr = base_lr;
  for (double m : milestones)
    if (static_cast<double>(iter) >= m * static_cast<double>(total)) lr *= gamma;
  return lr;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'D', 'I', 'C', 'L', 'C', 'K', 'P', 'T'};

void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string origin) : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw CheckpointError(origin_ + ": truncated checkpoint");
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t u64() {
    const auto* b = reinterpret_cast<const unsigned char*>(take(8));
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    const auto* b = reinterpret_cast<const unsigned char*>(take(4));
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
  }
  std::string string() {
    const std::uint64_t n = u64();
    if (n > bytes_.size()) throw CheckpointError(origin_ + ": corrupt string length");
    return std::string(take(n), n);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::string origin_;
  std::size_t pos_ = 0;
};

void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_string(out, name);
  put_u64(out, t.ndim());
  for (std::size_t d : t.shape()) put_u64(out, d);
  for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, FlowModel& model, const std::string& run_config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(kMagic, sizeof kMagic);
  const char v[4] = {static_cast<char>(kCheckpointVersion & 0xff), static_cast<char>((kCheckpointVersion >> 8) & 0xff),
                     static_cast<char>((kCheckpointVersion >> 16) & 0xff),
                     static_cast<char>((kCheckpointVersion >> 24) & 0xff)};
  out.write(v, 4);
  put_string(out, model.config().to_text());
  put_string(out, run_config);
  const ParamList list = model.parameters();
  put_u64(out, list.params.size() + list.buffers.size());
  for (const auto& p : list.params) put_tensor(out, p.name, p.var->value);
  for (const auto& b : list.buffers) put_tensor(out, b.name, *b.tensor);
  if (!out) throw CheckpointError("write to " + path.string() + " failed");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()), path.string());
  if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_text(r.string());
  ckpt.run_config = r.string();
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.string();
    const std::uint64_t ndim = r.u64();
    if (ndim == 0 || ndim > 8) throw CheckpointError(path.string() + ": bad rank for " + name);
    Shape shape(ndim);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = shape_numel(shape);
    std::vector<double> data(n);
    for (auto& x : data) x = std::bit_cast<double>(r.u64());
    ckpt.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after tensors");
  return ckpt;
}

void load_into(const Checkpoint& ckpt, FlowModel& model) {
  const ParamList list = model.parameters();
  std::vector<std::pair<std::string, Tensor*>> slots;
  for (const auto& p : list.params) slots.emplace_back(p.name, &p.var->value);
  for (const auto& b : list.buffers) slots.emplace_back(b.name, b.tensor);
  if (slots.size() != ckpt.tensors.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                          std::to_string(slots.size()));
  }
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& [name, t] = ckpt.tensors[i];
    if (name != slots[i].first || !t.same_shape(*slots[i].second)) {
      throw CheckpointError("checkpoint tensor '" + name + "' " + shape_string(t.shape()) + " does not match '" +
                            slots[i].first + "' " + shape_string(slots[i].second->shape()));
    }
    *slots[i].second = t;
  }
}

FlowModel load_model(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  std::mt19937_64 rng(0);
  FlowModel model(ckpt.config, rng);
  load_into(ckpt, model);
  return model;
}

}  // namespace dicl
