#include "tmf/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "tmf/error.hpp"

namespace tmf::ag {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMap = Eigen::Map<const RowMat<T>>;
template <typename T>
using MutMap = Eigen::Map<RowMat<T>>;

template <typename T>
thread_local Tape<T>* g_active_tape = nullptr;

template <typename T>
Tensor<T> make_out(Shape shape, std::vector<T> values, bool rec) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = rec;
  return Tensor<T>::from_node(std::move(node));
}

template <typename T>
void push_backward(std::function<void()> fn) {
  Tape<T>::active()->push(std::move(fn));
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorCode::Shape, std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

std::size_t norm_axis(int axis, std::size_t rank) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  require(a >= 0 && a < r, ErrorCode::Shape, "axis " + std::to_string(axis) + " out of range for rank " +
                                                 std::to_string(rank));
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t pre = 1, len = 1, post = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit out;
  for (std::size_t i = 0; i < axis; ++i) out.pre *= s[i];
  out.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) out.post *= s[i];
  return out;
}

bool is_suffix(const Shape& whole, const Shape& tail) {
  if (tail.size() > whole.size()) return false;
  return std::equal(tail.begin(), tail.end(), whole.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

template <typename T>
void accumulate(Node<T>* dst, const T* src, std::size_t n) {
  if (!dst->requires_grad) return;
  T* g = dst->grad_buffer();
  for (std::size_t i = 0; i < n; ++i) g[i] += src[i];
}

// Elementwise op with backward dx = dy * deriv[i].
template <typename T>
Tensor<T> unary(const Tensor<T>& a, std::vector<T> out_values, std::vector<T> deriv) {
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(a.shape(), std::move(out_values), rec);
  if (rec) {
    auto an = a.shared();
    auto on = out.shared();
    push_backward<T>([an, on, d = std::move(deriv)] {
      if (on->grad.empty() || !an->requires_grad) return;
      T* ga = an->grad_buffer();
      for (std::size_t i = 0; i < d.size(); ++i) ga[i] += on->grad[i] * d[i];
    });
  }
  return out;
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  const std::size_t n = numel(shape);
  return make_out<T>(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from_data(Shape shape, std::vector<T> data, bool requires_grad) {
  require(numel(shape) == data.size(), ErrorCode::Shape,
          "tensor data has " + std::to_string(data.size()) + " values for shape " + to_string(shape));
  return make_out<T>(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  return node_->shape[norm_axis(axis, node_->shape.size())];
}

template <typename T>
T Tensor<T>::item() const {
  require(size() == 1, ErrorCode::Shape, "item() needs a single-element tensor, got " + to_string(shape()));
  return node_->value[0];
}

template <typename T>
Tape<T>::Tape() : previous_(g_active_tape<T>) {
  g_active_tape<T> = this;
}

template <typename T>
Tape<T>::~Tape() {
  g_active_tape<T> = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return g_active_tape<T>;
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  require(loss.defined() && loss.size() == 1, ErrorCode::Contract,
          "backward needs a scalar loss, got shape " + (loss.defined() ? to_string(loss.shape()) : "<undefined>"));
  if (loss.requires_grad()) loss.node()->grad_buffer()[0] += T(1);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

template <typename T>
bool recording(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::active() == nullptr) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
  const std::size_t K = a.dim(-1), M = a.dim(-2);
  const bool rec = recording<T>({&a, &b});
  if (b.rank() == 2) {
    if (b.dim(0) != K) shape_error("matmul", a.shape(), b.shape());
    const std::size_t N = b.dim(1);
    const std::size_t rows = a.size() / K;
    Shape shape = a.shape();
    shape.back() = N;
    std::vector<T> values(rows * N);
    MutMap<T>(values.data(), rows, N).noalias() =
        ConstMap<T>(a.data().data(), rows, K) * ConstMap<T>(b.data().data(), K, N);
    Tensor<T> out = make_out(std::move(shape), std::move(values), rec);
    if (rec) {
      push_backward<T>([an = a.shared(), bn = b.shared(), on = out.shared(), rows, K, N] {
        if (on->grad.empty()) return;
        ConstMap<T> dC(on->grad.data(), rows, N);
        if (an->requires_grad) {
          MutMap<T>(an->grad_buffer(), rows, K).noalias() += dC * ConstMap<T>(bn->value.data(), K, N).transpose();
        }
        if (bn->requires_grad) {
          MutMap<T>(bn->grad_buffer(), K, N).noalias() += ConstMap<T>(an->value.data(), rows, K).transpose() * dC;
        }
      });
    }
    return out;
  }

  if (b.rank() != a.rank() || b.dim(-2) != K ||
      !std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin())) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t N = b.dim(-1);
  const std::size_t batch = a.size() / (M * K);
  Shape shape = a.shape();
  shape.back() = N;
  std::vector<T> values(batch * M * N);
  for (std::size_t i = 0; i < batch; ++i) {
    MutMap<T>(values.data() + i * M * N, M, N).noalias() =
        ConstMap<T>(a.data().data() + i * M * K, M, K) * ConstMap<T>(b.data().data() + i * K * N, K, N);
  }
  Tensor<T> out = make_out(std::move(shape), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), bn = b.shared(), on = out.shared(), batch, M, K, N] {
      if (on->grad.empty()) return;
      T* ga = an->requires_grad ? an->grad_buffer() : nullptr;
      T* gb = bn->requires_grad ? bn->grad_buffer() : nullptr;
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMap<T> dC(on->grad.data() + i * M * N, M, N);
        if (ga) {
          MutMap<T>(ga + i * M * K, M, K).noalias() +=
              dC * ConstMap<T>(bn->value.data() + i * K * N, K, N).transpose();
        }
        if (gb) {
          MutMap<T>(gb + i * K * N, K, N).noalias() +=
              ConstMap<T>(an->value.data() + i * M * K, M, K).transpose() * dC;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!is_suffix(a.shape(), b.shape())) shape_error("add", a.shape(), b.shape());
  const std::size_t n = a.size(), m = b.size();
  std::vector<T> values(a.data().begin(), a.data().end());
  const T* bv = b.data().data();
  for (std::size_t i = 0; i < n; i += m) {
    for (std::size_t j = 0; j < m; ++j) values[i + j] += bv[j];
  }
  const bool rec = recording<T>({&a, &b});
  Tensor<T> out = make_out(a.shape(), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), bn = b.shared(), on = out.shared(), n, m] {
      if (on->grad.empty()) return;
      const T* g = on->grad.data();
      accumulate(an.get(), g, n);
      if (bn->requires_grad) {
        T* gb = bn->grad_buffer();
        for (std::size_t i = 0; i < n; i += m) {
          for (std::size_t j = 0; j < m; ++j) gb[j] += g[i + j];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("sub", a.shape(), b.shape());
  std::vector<T> values(a.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.data()[i] - b.data()[i];
  const bool rec = recording<T>({&a, &b});
  Tensor<T> out = make_out(a.shape(), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), bn = b.shared(), on = out.shared()] {
      if (on->grad.empty()) return;
      accumulate(an.get(), on->grad.data(), on->grad.size());
      if (bn->requires_grad) {
        T* gb = bn->grad_buffer();
        for (std::size_t i = 0; i < on->grad.size(); ++i) gb[i] -= on->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) shape_error("mul", a.shape(), b.shape());
  std::vector<T> values(a.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = a.data()[i] * b.data()[i];
  const bool rec = recording<T>({&a, &b});
  Tensor<T> out = make_out(a.shape(), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), bn = b.shared(), on = out.shared()] {
      if (on->grad.empty()) return;
      const std::size_t n = on->grad.size();
      if (an->requires_grad) {
        T* ga = an->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) ga[i] += on->grad[i] * bn->value[i];
      }
      if (bn->requires_grad) {
        T* gb = bn->grad_buffer();
        for (std::size_t i = 0; i < n; ++i) gb[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  std::vector<T> values(a.data().begin(), a.data().end());
  for (T& v : values) v *= factor;
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(a.shape(), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), on = out.shared(), factor] {
      if (on->grad.empty() || !an->requires_grad) return;
      T* ga = an->grad_buffer();
      for (std::size_t i = 0; i < on->grad.size(); ++i) ga[i] += on->grad[i] * factor;
    });
  }
  return out;
}

namespace {

struct TransposePlan {
  std::size_t pre = 1, A = 1, mid = 1, B = 1, post = 1;
};

// Copies src laid out as [pre, A, mid, B, post] into dst as [pre, B, mid, A, post].
template <typename T>
void transpose_copy(const T* src, T* dst, const TransposePlan& p, bool accumulate_into) {
  for (std::size_t i = 0; i < p.pre; ++i) {
    for (std::size_t a = 0; a < p.A; ++a) {
      for (std::size_t m = 0; m < p.mid; ++m) {
        for (std::size_t b = 0; b < p.B; ++b) {
          const T* s = src + ((((i * p.A + a) * p.mid + m) * p.B + b) * p.post);
          T* d = dst + ((((i * p.B + b) * p.mid + m) * p.A + a) * p.post);
          if (accumulate_into) {
            for (std::size_t q = 0; q < p.post; ++q) d[q] += s[q];
          } else {
            std::copy(s, s + p.post, d);
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int axis0, int axis1) {
  std::size_t d0 = norm_axis(axis0, a.rank()), d1 = norm_axis(axis1, a.rank());
  if (d0 == d1) return a;
  if (d0 > d1) std::swap(d0, d1);
  const Shape& s = a.shape();
  TransposePlan p;
  for (std::size_t i = 0; i < d0; ++i) p.pre *= s[i];
  p.A = s[d0];
  for (std::size_t i = d0 + 1; i < d1; ++i) p.mid *= s[i];
  p.B = s[d1];
  for (std::size_t i = d1 + 1; i < s.size(); ++i) p.post *= s[i];
  Shape shape = s;
  std::swap(shape[d0], shape[d1]);
  std::vector<T> values(a.size());
  transpose_copy(a.data().data(), values.data(), p, false);
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(std::move(shape), std::move(values), rec);
  if (rec) {
    TransposePlan back{p.pre, p.B, p.mid, p.A, p.post};
    push_backward<T>([an = a.shared(), on = out.shared(), back] {
      if (on->grad.empty() || !an->requires_grad) return;
      transpose_copy(on->grad.data(), an->grad_buffer(), back, true);
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) shape_error("reshape", a.shape(), shape);
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(std::move(shape), std::vector<T>(a.data().begin(), a.data().end()), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), on = out.shared()] {
      if (on->grad.empty()) return;
      accumulate(an.get(), on->grad.data(), on->grad.size());
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = norm_axis(axis, a.rank());
  const AxisSplit sp = split_at(a.shape(), ax);
  if (begin >= end || end > sp.len) {
    fail(ErrorCode::Shape, "slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                               to_string(a.shape()) + " on axis " + std::to_string(ax));
  }
  const std::size_t len = end - begin;
  Shape shape = a.shape();
  shape[ax] = len;
  std::vector<T> values(sp.pre * len * sp.post);
  const T* src = a.data().data();
  for (std::size_t i = 0; i < sp.pre; ++i) {
    std::copy(src + (i * sp.len + begin) * sp.post, src + (i * sp.len + end) * sp.post,
              values.begin() + static_cast<std::ptrdiff_t>(i * len * sp.post));
  }
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(std::move(shape), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), on = out.shared(), sp, begin, len] {
      if (on->grad.empty() || !an->requires_grad) return;
      T* ga = an->grad_buffer();
      for (std::size_t i = 0; i < sp.pre; ++i) {
        const T* g = on->grad.data() + i * len * sp.post;
        T* d = ga + (i * sp.len + begin) * sp.post;
        for (std::size_t q = 0; q < len * sp.post; ++q) d[q] += g[q];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  require(!parts.empty(), ErrorCode::Shape, "concat needs at least one tensor");
  const std::size_t ax = norm_axis(axis, parts[0].rank());
  Shape shape = parts[0].shape();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) shape_error("concat", shape, s);
    s[ax] = shape[ax];
    if (s != shape) shape_error("concat", parts[0].shape(), p.shape());
    total += p.shape()[ax];
  }
  shape[ax] = total;
  const AxisSplit out_sp = split_at(shape, ax);
  std::vector<T> values(numel(shape));
  std::size_t offset = 0;
  std::vector<std::size_t> offsets;
  bool rec = false;
  for (const auto& p : parts) {
    const AxisSplit sp = split_at(p.shape(), ax);
    for (std::size_t i = 0; i < sp.pre; ++i) {
      std::copy(p.data().begin() + static_cast<std::ptrdiff_t>(i * sp.len * sp.post),
                p.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * sp.len * sp.post),
                values.begin() + static_cast<std::ptrdiff_t>((i * out_sp.len + offset) * sp.post));
    }
    offsets.push_back(offset);
    offset += sp.len;
    rec = rec || recording<T>({&p});
  }
  Tensor<T> out = make_out(std::move(shape), std::move(values), rec);
  if (rec) {
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.shared());
    push_backward<T>([nodes, on = out.shared(), offsets, out_sp, ax] {
      if (on->grad.empty()) return;
      for (std::size_t k = 0; k < nodes.size(); ++k) {
        Node<T>* n = nodes[k].get();
        if (!n->requires_grad) continue;
        const AxisSplit sp = split_at(n->shape, ax);
        T* g = n->grad_buffer();
        for (std::size_t i = 0; i < sp.pre; ++i) {
          const T* src = on->grad.data() + (i * out_sp.len + offsets[k]) * sp.post;
          T* dst = g + i * sp.len * sp.post;
          for (std::size_t q = 0; q < sp.len * sp.post; ++q) dst[q] += src[q];
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, bool causal) {
  require(a.rank() >= 1, ErrorCode::Shape, "softmax needs rank >= 1");
  const std::size_t n = a.dim(-1);
  const std::size_t rows = a.size() / n;
  const std::size_t rows_per_matrix = causal ? a.dim(-2) : 1;
  if (causal) require(a.rank() >= 2, ErrorCode::Shape, "causal softmax needs rank >= 2");
  std::vector<T> values(a.size(), T(0));
  const T* x = a.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t valid = causal ? std::min(n, r % rows_per_matrix + 1) : n;
    const T* xr = x + r * n;
    T* yr = values.data() + r * n;
    T mx = xr[0];
    for (std::size_t j = 1; j < valid; ++j) mx = std::max(mx, xr[j]);
    T total = 0;
    for (std::size_t j = 0; j < valid; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      total += yr[j];
    }
    const T inv = T(1) / total;
    for (std::size_t j = 0; j < valid; ++j) yr[j] *= inv;
  }
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(a.shape(), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), on = out.shared(), n, rows] {
      if (on->grad.empty() || !an->requires_grad) return;
      T* ga = an->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = on->value.data() + r * n;
        const T* dy = on->grad.data() + r * n;
        T dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += y[j] * dy[j];
        T* g = ga + r * n;
        for (std::size_t j = 0; j < n; ++j) g[j] += y[j] * (dy[j] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t n = x.dim(-1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) shape_error("layer_norm", x.shape(), gain.shape());
  const std::size_t rows = x.size() / n;
  std::vector<T> values(x.size()), xhat(x.size()), rstd(rows);
  const T* xv = x.data().data();
  const T* g = gain.data().data();
  const T* b = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * n;
    T mu = 0;
    for (std::size_t j = 0; j < n; ++j) mu += xr[j];
    mu /= static_cast<T>(n);
    T var = 0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(n);
    const T rs = T(1) / std::sqrt(var + eps);
    rstd[r] = rs;
    for (std::size_t j = 0; j < n; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * n + j] = h;
      values[r * n + j] = h * g[j] + b[j];
    }
  }
  const bool rec = recording<T>({&x, &gain, &bias});
  Tensor<T> out = make_out(x.shape(), std::move(values), rec);
  if (rec) {
    push_backward<T>([xn = x.shared(), gn = gain.shared(), bn = bias.shared(), on = out.shared(),
                      xhat = std::move(xhat), rstd = std::move(rstd), n, rows] {
      if (on->grad.empty()) return;
      const T* dy = on->grad.data();
      const T* g = gn->value.data();
      if (gn->requires_grad || bn->requires_grad) {
        T* dg = gn->requires_grad ? gn->grad_buffer() : nullptr;
        T* db = bn->requires_grad ? bn->grad_buffer() : nullptr;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) {
            if (dg) dg[j] += dy[r * n + j] * xhat[r * n + j];
            if (db) db[j] += dy[r * n + j];
          }
        }
      }
      if (!xn->requires_grad) return;
      T* dx = xn->grad_buffer();
      const T inv_n = T(1) / static_cast<T>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_d = 0, mean_dh = 0;
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[r * n + j] * g[j];
          mean_d += d;
          mean_dh += d * xhat[r * n + j];
        }
        mean_d *= inv_n;
        mean_dh *= inv_n;
        for (std::size_t j = 0; j < n; ++j) {
          const T d = dy[r * n + j] * g[j];
          dx[r * n + j] += rstd[r] * (d - mean_d - xhat[r * n + j] * mean_dh);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  const T inv_sqrt_2pi = T(1) / std::sqrt(T(2) * std::numbers::pi_v<T>);
  std::vector<T> values(a.size()), deriv;
  const bool rec = recording<T>({&a});
  if (rec) deriv.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T x = a.data()[i];
    const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
    values[i] = x * cdf;
    if (rec) deriv[i] = cdf + x * inv_sqrt_2pi * std::exp(T(-0.5) * x * x);
  }
  return unary(a, std::move(values), std::move(deriv));
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> values(a.size()), deriv(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T x = a.data()[i];
    values[i] = x > T(0) ? x : T(0);
    deriv[i] = x > T(0) ? T(1) : T(0);
  }
  return unary(a, std::move(values), std::move(deriv));
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double p, bool training, std::uint64_t seed) {
  require(p >= 0.0 && p < 1.0, ErrorCode::Parameter, "dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return a;
  std::mt19937_64 rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> values(a.size()), mask(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    mask[i] = u < p ? T(0) : keep_scale;
    values[i] = a.data()[i] * mask[i];
  }
  return unary(a, std::move(values), std::move(mask));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (T v : a.data()) total += v;
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(Shape{}, std::vector<T>{total}, rec);
  if (rec) {
    push_backward<T>([an = a.shared(), on = out.shared()] {
      if (on->grad.empty() || !an->requires_grad) return;
      T* ga = an->grad_buffer();
      const T g = on->grad[0];
      for (std::size_t i = 0; i < an->value.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  require(a.size() > 0, ErrorCode::Shape, "mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> sum_last(const Tensor<T>& a) {
  require(a.rank() >= 1, ErrorCode::Shape, "sum_last needs rank >= 1");
  const std::size_t n = a.dim(-1);
  const std::size_t rows = a.size() / n;
  Shape shape(a.shape().begin(), a.shape().end() - 1);
  std::vector<T> values(rows, T(0));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) values[r] += a.data()[r * n + j];
  }
  const bool rec = recording<T>({&a});
  Tensor<T> out = make_out(std::move(shape), std::move(values), rec);
  if (rec) {
    push_backward<T>([an = a.shared(), on = out.shared(), n, rows] {
      if (on->grad.empty() || !an->requires_grad) return;
      T* ga = an->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) ga[r * n + j] += on->grad[r];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> values(a.size()), deriv(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    values[i] = a.data()[i] * a.data()[i];
    deriv[i] = T(2) * a.data()[i];
  }
  return unary(a, std::move(values), std::move(deriv));
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
  std::vector<T> values(a.size()), deriv(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const T x = a.data()[i];
    require(x >= T(0), ErrorCode::Numeric, "sqrt of a negative value");
    values[i] = std::sqrt(x);
    deriv[i] = values[i] > T(0) ? T(0.5) / values[i] : T(0);
  }
  return unary(a, std::move(values), std::move(deriv));
}

double gradcheck(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                 double eps) {
  std::vector<Tensor<double>> params{
      Tensor<double>::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), true)};
  return gradcheck_parameters([&] { return f(params[0]); }, params, eps);
}

double gradcheck_parameters(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>>& params,
                            double eps) {
  for (auto& p : params) p.zero_grad();
  {
    Tape<double> tape;
    const Tensor<double> loss = loss_fn();
    tape.backward(loss);
  }
  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> analytic =
        p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end()) : std::vector<double>(p.size(), 0.0);
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + eps;
      const Tensor<double> up = loss_fn();
      require(up.size() == 1, ErrorCode::Contract, "gradcheck needs a scalar-valued function");
      const double f_plus = up.item();
      values[i] = orig - eps;
      const double f_minus = loss_fn().item();
      values[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

#define TMF_INSTANTIATE(T)                                                                       \
  template class Tensor<T>;                                                                      \
  template class Tape<T>;                                                                        \
  template bool recording<T>(std::initializer_list<const Tensor<T>*>);                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> scale(const Tensor<T>&, T);                                                 \
  template Tensor<T> transpose(const Tensor<T>&, int, int);                                      \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                           \
  template Tensor<T> slice(const Tensor<T>&, int, std::size_t, std::size_t);                     \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                                 \
  template Tensor<T> softmax(const Tensor<T>&, bool);                                            \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> gelu(const Tensor<T>&);                                                     \
  template Tensor<T> relu(const Tensor<T>&);                                                     \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, std::uint64_t);                     \
  template Tensor<T> sum(const Tensor<T>&);                                                      \
  template Tensor<T> mean(const Tensor<T>&);                                                     \
  template Tensor<T> sum_last(const Tensor<T>&);                                                 \
  template Tensor<T> square(const Tensor<T>&);                                                   \
  template Tensor<T> sqrt(const Tensor<T>&);

TMF_INSTANTIATE(float)
TMF_INSTANTIATE(double)

#undef TMF_INSTANTIATE

}  // namespace tmf::ag
