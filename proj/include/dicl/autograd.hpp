#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dicl/tensor.hpp"

namespace dicl {

struct Node;
using Var = std::shared_ptr<Node>;

/// Local backward rule: reads `self.grad` and accumulates into the grads of
/// `self.parents`.
using BackwardFn = std::function<void(Node& self)>;

/// A value on the tape. `grad` always has the shape of `value`.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<Var> parents;
  BackwardFn backward_fn;
  bool requires_grad = false;
};

/// Leaf that never receives gradients.
Var constant(Tensor value);
/// Trainable leaf.
Var parameter(Tensor value);

/// Records an operator result. Rejects non-finite values. The backward rule is
/// only kept when gradient recording is enabled and some parent needs it.
Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward_fn);

/// Reverse-mode accumulation from a scalar root into every reachable node
/// that requires a gradient.
void backward(const Var& root);

bool grad_enabled() noexcept;

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Named handle to a trainable parameter.
struct NamedParam {
  std::string name;
  Var var;
};

/// Named pointer to a non-trainable state tensor (e.g. running statistics).
struct NamedBuffer {
  std::string name;
  Tensor* tensor;
};

struct BatchNormState;

struct ParamList {
  std::vector<NamedParam> params;
  std::vector<NamedBuffer> buffers;
  std::vector<BatchNormState*> norms;

  void add(std::string name, const Var& var) { params.push_back({std::move(name), var}); }
  void add_buffer(std::string name, Tensor* t) { buffers.push_back({std::move(name), t}); }
  void add_norm(BatchNormState* state) { norms.push_back(state); }
  std::size_t scalar_count() const;
};

void zero_grads(const ParamList& list);

}  // namespace dicl
