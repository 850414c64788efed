#include "adn/tensor.hpp"

#include <sstream>

namespace adn {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0f, requires_grad);
}

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  Tensor t;
  for (int64_t d : shape) {
    if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + shape_str(shape));
  }
  t.shape_ = std::move(shape);
  t.storage_ = std::make_shared<std::vector<float>>(shape_numel(t.shape_), value);
  t.meta_ = std::make_shared<detail::AutogradMeta>();
  t.meta_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<float> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(values.size()))
    throw ShapeError("from_data: " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  Tensor t;
  t.shape_ = std::move(shape);
  t.storage_ = std::make_shared<std::vector<float>>(std::move(values));
  t.meta_ = std::make_shared<detail::AutogradMeta>();
  t.meta_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(float value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

int64_t Tensor::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ShapeError("dim axis out of range for " + shape_str(shape_));
  return shape_[static_cast<size_t>(axis)];
}

int64_t Tensor::numel() const { return storage_ ? static_cast<int64_t>(storage_->size()) : 0; }

float* Tensor::data() { return storage_->data(); }
const float* Tensor::data() const { return storage_->data(); }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor with shape " + shape_str(shape_));
  return (*storage_)[0];
}

bool Tensor::requires_grad() const { return meta_ && meta_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  meta_->requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return meta_ && meta_->grad != nullptr; }

std::vector<float>& Tensor::grad() {
  if (!meta_->grad) meta_->grad = std::make_shared<std::vector<float>>(numel(), 0.0f);
  return *meta_->grad;
}

const std::vector<float>& Tensor::grad() const {
  if (!has_grad()) throw ValueError("tensor has no gradient");
  return *meta_->grad;
}

void Tensor::zero_grad() {
  if (meta_ && meta_->grad) std::fill(meta_->grad->begin(), meta_->grad->end(), 0.0f);
}

Tensor Tensor::detach() const {
  Tensor t;
  t.storage_ = storage_;
  t.shape_ = shape_;
  t.meta_ = std::make_shared<detail::AutogradMeta>();
  return t;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.storage_ = std::make_shared<std::vector<float>>(*storage_);
  t.shape_ = shape_;
  t.meta_ = std::make_shared<detail::AutogradMeta>();
  return t;
}

Tensor Tensor::view_as(Shape new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw ShapeError("view_as: cannot view " + shape_str(shape_) + " as " + shape_str(new_shape));
  Tensor t;
  t.storage_ = storage_;
  t.shape_ = std::move(new_shape);
  t.meta_ = std::make_shared<detail::AutogradMeta>();
  return t;
}

namespace {
thread_local int g_no_grad_depth = 0;
}

bool grad_enabled() { return g_no_grad_depth == 0; }

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

Tape& Tape::active() {
  thread_local Tape tape;
  return tape;
}

void Tape::reset() {
  nodes_.clear();
  scratch_.clear();
  ++gen_;
}

bool Tape::recording() const { return grad_enabled(); }

bool Tape::tracked(const Tensor& t) {
  if (!t.defined()) return false;
  const auto& m = t.meta();
  if (m->requires_grad) return true;
  return m->tape_gen == active().gen_ && m->tape_node >= 0;
}

int Tape::input_node(const Tensor& t) {
  auto& m = *t.meta();
  if (m.tape_gen == gen_ && m.tape_node >= 0) return m.tape_node;
  if (!m.requires_grad) return -1;
  // fresh leaf
  Node node;
  node.nel = t.numel();
  node.sink = t.meta();
  nodes_.push_back(std::move(node));
  m.tape_gen = gen_;
  m.tape_node = static_cast<int>(nodes_.size()) - 1;
  return m.tape_node;
}

void Tape::record(Tensor& out, std::vector<int> parents, BackwardFn fn) {
  Node node;
  node.nel = out.numel();
  node.parents = std::move(parents);
  node.fn = std::move(fn);
  node.sink = out.meta();
  nodes_.push_back(std::move(node));
  auto& m = *out.meta();
  m.requires_grad = true;
  m.tape_gen = gen_;
  m.tape_node = static_cast<int>(nodes_.size()) - 1;
}

float* Tape::grad_of(int node) {
  auto& buf = scratch_[static_cast<size_t>(node)];
  if (buf.empty()) buf.assign(static_cast<size_t>(nodes_[static_cast<size_t>(node)].nel), 0.0f);
  return buf.data();
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  const auto& m = loss.meta();
  if (!(m->tape_gen == gen_ && m->tape_node >= 0))
    throw ValueError("backward: loss is not recorded on the active tape");
  if (in_backward_) throw ValueError("backward: reentrant call");
  in_backward_ = true;
  scratch_.assign(nodes_.size(), {});
  scratch_[static_cast<size_t>(m->tape_node)].assign(1, 1.0f);
  for (int id = m->tape_node; id >= 0; --id) {
    auto& g = scratch_[static_cast<size_t>(id)];
    if (g.empty()) continue;  // not reachable from the loss
    Node& node = nodes_[static_cast<size_t>(id)];
    if (auto sink = node.sink.lock(); sink && sink->requires_grad) {
      if (!sink->grad) sink->grad = std::make_shared<std::vector<float>>(node.nel, 0.0f);
      auto& acc = *sink->grad;
      for (size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    }
    if (node.fn) node.fn(*this, g.data());
    g.clear();
    g.shrink_to_fit();
  }
  scratch_.clear();
  in_backward_ = false;
  ++backward_calls_;
}

void backward(const Tensor& loss) { Tape::active().backward(loss); }

}  // namespace adn
