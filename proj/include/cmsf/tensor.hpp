#pragma once

// Dense float32 arrays with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations create new
// nodes that remember their parents and a backward closure; Tensor::backward()
// walks the graph in reverse topological order and accumulates gradients into
// every reachable node that requires them. Once backward() has run, interior
// nodes drop their closures so the graph can be released.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cmsf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

class Tensor {
 public:
  using BackwardFn = std::function<void(const Node& self)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> data, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  // Builds the result of a differentiable op. When gradient recording is off
  // or no parent requires a gradient, parents and backward are discarded.
  static Tensor from_op(Shape shape, std::vector<float> data, std::vector<Tensor> parents,
                        BackwardFn backward);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  // Negative axes count from the end.
  std::size_t dim(int axis) const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float at(std::size_t flat_index) const { return data()[flat_index]; }
  float item() const;

  bool requires_grad() const;
  void set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();

  const std::string& name() const;
  void set_name(std::string name);

  // Shares data, cuts the graph.
  Tensor detach() const;
  // Deep copy without graph.
  Tensor clone() const;

  void backward() const;

  Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;

  friend struct Node;
};

struct Node {
  Shape shape;
  std::shared_ptr<std::vector<float>> data;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<Tensor> parents;
  Tensor::BackwardFn backward;
  std::string name;

  std::span<const float> values() const { return *data; }
  // Allocates the gradient buffer on first use.
  std::span<float> grad_buffer();
  bool has_grad() const { return !grad.empty(); }
};

// Accumulates into a parent's gradient; no-op when the parent does not
// require one.
std::span<float> grad_of(const Tensor& parent);

// Gradient recording switch, thread local.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Synaptic operation counts recorded by the array ops while a ScopedOpCounter
// is active on the current thread. Neuron dynamics are not counted.
struct OpCounts {
  std::uint64_t macs = 0;       // multiply-accumulates inside matmuls
  std::uint64_t mask_muls = 0;  // elementwise tensor-by-tensor products
  std::uint64_t adds = 0;       // accumulations inside reductions
};

class ScopedOpCounter {
 public:
  ScopedOpCounter();
  ~ScopedOpCounter();
  ScopedOpCounter(const ScopedOpCounter&) = delete;
  ScopedOpCounter& operator=(const ScopedOpCounter&) = delete;

  const OpCounts& counts() const { return counts_; }

 private:
  OpCounts counts_;
  OpCounts* previous_;
};

// Current thread's active counter, or nullptr.
OpCounts* active_op_counter();

}  // namespace cmsf
