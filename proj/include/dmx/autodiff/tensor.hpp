// Copyright 2026 The dmx Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dmx::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// One vertex of the backward graph. Leaves have no backward_fn.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  /// Grad buffer of a node, allocated on first use; nullptr when the node
  /// does not require a gradient.
  float* grad_buffer();
};

/// Row-major float32 tensor. Copies share the same node (reference
/// semantics, like the graph it lives in); use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<float> data() { return node_->value; }
  std::span<const float> data() const { return node_->value; }
  std::vector<float>& values() { return node_->value; }
  const std::vector<float>& values() const { return node_->value; }
  float item() const;

  std::span<float> grad() { return node_->grad; }
  std::span<const float> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size() && !node_->value.empty(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);

  /// Same values, fresh leaf without graph history.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Result of an op. Records parents and the backward rule only when
/// recording is on and some input requires a gradient.
Tensor make_result(Shape shape, std::vector<float> value, const std::vector<Tensor>& inputs,
                   std::function<void(Node&)> backward_fn);

struct BackwardStats {
  std::size_t nodes_visited = 0;
};

/// Reverse-mode sweep from a scalar. Leaf gradients accumulate across
/// calls; intermediate gradients are reset at the start of every call.
BackwardStats backward(const Tensor& loss);

}  // namespace dmx::ad
