#include "dicl/autograd.hpp"

#include <unordered_set>

namespace dicl {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->grad = Tensor::zeros_like(value);
  node->value = std::move(value);
  return node;
}

Var parameter(Tensor value) {
  auto node = constant(std::move(value));
  node->requires_grad = true;
  return node;
}

Var make_result(Tensor value, std::vector<Var> parents, BackwardFn backward_fn) {
  if (!value.all_finite()) {
    throw NonFiniteError("operator produced non-finite values for shape " + shape_string(value.shape()));
  }
  auto node = std::make_shared<Node>();
  node->grad = Tensor::zeros_like(value);
  node->value = std::move(value);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
  }
  if (needs) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward_fn = std::move(backward_fn);
  }
  return node;
}

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: null root");
  if (root->value.numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got shape " + shape_string(root->value.shape()));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent && parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
  }
}

std::size_t ParamList::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.var->value.numel();
  return n;
}

void zero_grads(const ParamList& list) {
  for (const auto& p : list.params) p.var->grad.fill(0.0);
}

}  // namespace dicl
