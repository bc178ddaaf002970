#pragma once

// Minimal reverse-mode tensor library: row-major dense tensors and a tape of
// backward closures. Ops record onto the thread's active Tape only when one
// exists and at least one input requires a gradient; without a tape every op
// is a plain forward computation.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tmf::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily
  bool requires_grad = false;

  T* grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad.data();
  }
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor from_node(std::shared_ptr<Node<T>> node) { return Tensor(std::move(node)); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  // Negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }
  bool requires_grad() const { return node_->requires_grad; }

  // Value of a single-element tensor.
  T item() const;

  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& shared() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void push(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }
  std::size_t size() const { return ops_.size(); }

  // Seeds d(loss)/d(loss) = 1, runs recorded closures newest first, then
  // clears the tape. Throws Contract for a non-scalar loss.
  void backward(const Tensor<T>& loss);

  static Tape* active();

 private:
  std::vector<std::function<void()>> ops_;
  Tape* previous_ = nullptr;
};

// True when an op over these inputs should be recorded.
template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs);

template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, int axis0, int axis1);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t begin, std::size_t end);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
// Softmax over the last axis. With `causal`, entry (i, j) of each trailing
// matrix is exactly zero for j > i.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, bool causal = false);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
// Inverted dropout; identity when !training or p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, double p, bool training, std::uint64_t seed);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> sum_last(const Tensor<T>& a);
template <typename T> Tensor<T> square(const Tensor<T>& a);
// Backward uses 1 / (2 sqrt(x)) where x > 0 and 0 at x = 0.
template <typename T> Tensor<T> sqrt(const Tensor<T>& a);

// Central-difference audit of d f(x) / d x at 64-bit precision. Returns the
// max over coordinates of |g_a - g_n| / max(1, |g_a|, |g_n|).
double gradcheck(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                 const Tensor<double>& x, double eps = 1e-5);

// Same audit over every coordinate of every tensor in `params`; `loss_fn`
// must read the current parameter values on each call.
double gradcheck_parameters(const std::function<Tensor<double>()>& loss_fn,
                            std::vector<Tensor<double>>& params, double eps = 1e-5);

}  // namespace tmf::ag
