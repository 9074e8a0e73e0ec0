#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "aldsr/errors.hpp"

namespace aldsr {

using Shape = std::vector<std::size_t>;

enum class DType { F32, F64 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "tensors hold float or double");
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);
const char* dtype_name(DType dtype);

template <typename T>
struct TensorData {
  Shape shape;
  std::vector<T> values;
  // Empty until a gradient is accumulated; same length as values otherwise.
  std::vector<T> grad;
  bool requires_grad = false;
  std::optional<std::size_t> tape_id;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), T{0});
    return grad;
  }
};

// Dense row-major tensor. Copies share storage; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : data_(std::make_shared<TensorData<T>>()) {
    data_->values.assign(shape_numel(shape), fill);
    data_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> values) : data_(std::make_shared<TensorData<T>>()) {
    if (shape_numel(shape) != values.size()) {
      throw DimensionError("tensor: shape " + shape_str(shape) + " does not hold " +
                           std::to_string(values.size()) + " values");
    }
    data_->shape = std::move(shape);
    data_->values = std::move(values);
  }

  static Tensor scalar(T value) { return Tensor(Shape{}, std::vector<T>{value}); }

  bool defined() const { return data_ != nullptr; }

  const Shape& shape() const { return data_->shape; }
  std::size_t rank() const { return data_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return data_->shape.at(axis); }
  std::size_t numel() const { return data_->values.size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> values() const { return data_->values; }
  // Direct write access, for initialization and optimizer updates between steps.
  std::span<T> mutable_values() { return data_->values; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return data_->values[0];
  }

  bool requires_grad() const { return data_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    data_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !data_->grad.empty(); }
  std::span<const T> grad() const { return data_->grad; }
  std::span<T> mutable_grad() { return data_->grad_buffer(); }
  void zero_grad() { data_->grad.clear(); }

  std::optional<std::size_t> tape_id() const { return data_->tape_id; }

  Tensor clone() const { return Tensor(shape(), data_->values); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->values.begin(), data_->values.end());
    return Tensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<TensorData<T>>& data() const { return data_; }

 private:
  std::shared_ptr<TensorData<T>> data_;
};

// Append-only record of differentiable operations. Constructing a Tape makes it
// the active tape of the calling thread until it is destroyed; operations whose
// inputs require gradients append a node to the active tape.
template <typename T>
class Tape {
 public:
  Tape() : previous_(active_) { active_ = this; }
  ~Tape() { active_ = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  std::size_t size() const { return nodes_.size(); }

  void record(const Tensor<T>& output, std::function<void()> backward) {
    output.data()->requires_grad = true;
    output.data()->tape_id = nodes_.size();
    nodes_.push_back({output.data(), std::move(backward)});
  }

  // Seeds d(loss)/d(loss) = 1 and runs every node once, newest first.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.numel() != 1) {
      throw ContractError("backward: loss must be a scalar tensor");
    }
    const auto id = loss.tape_id();
    if (!id || *id >= nodes_.size() || nodes_[*id].output != loss.data()) {
      throw ContractError("backward: loss is not connected to this tape");
    }
    loss.data()->grad_buffer()[0] += T{1};
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& node = nodes_[i];
      if (!node.output->grad.empty()) node.backward();
    }
    for (auto& node : nodes_) node.output->tape_id.reset();
    nodes_.clear();
  }

 private:
  struct Node {
    std::shared_ptr<TensorData<T>> output;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;
  Tape* previous_;
  inline static thread_local Tape* active_ = nullptr;
};

// Backpropagates through the calling thread's active tape.
template <typename T>
void backward(const Tensor<T>& loss) {
  Tape<T>* tape = Tape<T>::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

}  // namespace aldsr
