#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "adn/error.hpp"

namespace adn {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct AutogradMeta {
  bool requires_grad = false;
  std::shared_ptr<std::vector<float>> grad;  // lazily allocated, same numel as tensor
  uint64_t tape_gen = 0;
  int tape_node = -1;
};
}  // namespace detail

/// Dense row-major f32 tensor. Copies are shallow: they share storage,
/// the gradient buffer and the tape linkage, like a reference-counted
/// handle. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int axis) const;
  int64_t numel() const;

  float* data();
  const float* data() const;
  float item() const;  // value of a one-element tensor

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);

  bool has_grad() const;
  std::vector<float>& grad();              // allocates a zero buffer on first use
  const std::vector<float>& grad() const;  // throws if no gradient has been produced
  void zero_grad();

  Tensor detach() const;  // shares storage, drops autograd state
  Tensor clone() const;   // deep copy, no autograd state

  std::shared_ptr<std::vector<float>> storage() const { return storage_; }
  const std::shared_ptr<detail::AutogradMeta>& meta() const { return meta_; }

  // Same storage under a different shape; no tape linkage. The reshape op in
  // ops.hpp is the tape-aware variant.
  Tensor view_as(Shape new_shape) const;

 private:
  std::shared_ptr<std::vector<float>> storage_;
  std::shared_ptr<detail::AutogradMeta> meta_;
  Shape shape_;
};

/// True while gradient recording is enabled on this thread.
bool grad_enabled();

/// RAII guard disabling gradient recording (evaluation paths).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

class Tape;
using BackwardFn = std::function<void(Tape&, const float*)>;

/// Reverse-mode gradient tape. Operations append nodes in execution order;
/// backward() replays adjoints in reverse insertion order, so every node is
/// visited after all of its consumers. Gradients ACCUMULATE into the
/// persistent .grad() buffers of live requires-grad tensors; calling
/// backward twice therefore doubles them.
class Tape {
 public:
  /// Thread-local active tape.
  static Tape& active();

  /// Drops all recorded nodes and invalidates previous tape links.
  void reset();

  uint64_t generation() const { return gen_; }
  size_t size() const { return nodes_.size(); }
  uint64_t backward_calls() const { return backward_calls_; }

  bool recording() const;
  /// Whether t participates in autodiff (requires grad or produced on the
  /// current generation of the tape).
  static bool tracked(const Tensor& t);

  /// Node id for an op input: existing node, a fresh leaf for requires-grad
  /// tensors, or -1 for constants.
  int input_node(const Tensor& t);

  /// Record an op that produced `out`. `fn` receives the output gradient and
  /// accumulates into parent scratch buffers via grad_of().
  void record(Tensor& out, std::vector<int> parents, BackwardFn fn);

  /// Scratch gradient buffer of a node; valid only while backward runs.
  float* grad_of(int node);

  void backward(const Tensor& loss);

 private:
  struct Node {
    int64_t nel = 0;
    std::vector<int> parents;
    BackwardFn fn;  // empty for graph inputs
    std::weak_ptr<detail::AutogradMeta> sink;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<float>> scratch_;
  bool in_backward_ = false;
  uint64_t gen_ = 1;
  uint64_t backward_calls_ = 0;
};

/// backward() on the active tape.
void backward(const Tensor& loss);

}  // namespace adn
