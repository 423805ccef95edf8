#pragma once

// Reverse-mode differentiation over Tensor values. Every op evaluates its
// forward value eagerly and records a backward closure on the Tape; calling
// Tape::backward walks the record once in reverse order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "shapegraph/error.hpp"
#include "shapegraph/rng.hpp"
#include "shapegraph/tensor.hpp"

namespace shapegraph {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return tape->value(id); }
  const Tensor<T>& grad() const { return tape->grad(id); }
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false) {
    nodes_.push_back(Node{std::move(value), {}, {}, requires_grad});
    return {this, nodes_.size() - 1};
  }

  // Adds a computed node. The backward rule is dropped when no input needs
  // a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
    return {this, nodes_.size() - 1};
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward) {
    bool needs = false;
    for (const auto& in : inputs) needs = needs || nodes_.at(in.id).requires_grad;
    nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : Backward{}, needs});
    return {this, nodes_.size() - 1};
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient buffer of a node, zero-initialized on first access.
  Tensor<T>& grad(std::size_t id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty() && !n.value.empty()) n.grad = Tensor<T>(n.value.shape(), T(0));
    return n.grad;
  }
  const Tensor<T>& grad(std::size_t id) const { return const_cast<Tape*>(this)->grad(id); }

  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }

  void backward(Var<T> root) {
    if (root.value().size() != 1)
      fail(ErrorCode::ShapeMismatch, "backward() needs a scalar root, got " + shape_str(root.shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    grad(root.id)[0] = T(1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Ops

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

template <typename T>
MapC<T> as_matrix(const Tensor<T>& t) {
  return MapC<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
template <typename T>
MapM<T> as_matrix(Tensor<T>& t) {
  return MapM<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

[[noreturn]] inline void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  fail(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_str(a) + " vs " + shape_str(b));
}

// How `b` combines with `a` in an elementwise op.
enum class Bcast { Same, Row, Scalar };

inline Bcast broadcast_kind(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return Bcast::Same;
  if (shape_size(b) == 1 && b.size() <= 1) return Bcast::Scalar;
  if (b.size() == 1 && !a.empty() && a.back() == b[0]) return Bcast::Row;
  shape_mismatch(op, a, b);
}

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
  Shape reduced;
};

inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) fail(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  r.reduced = s;
  r.reduced.erase(r.reduced.begin() + static_cast<std::ptrdiff_t>(axis));
  return r;
}

}  // namespace detail

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const auto &av = a.value(), &bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) detail::shape_mismatch("matmul", av.shape(), bv.shape());
  Tensor<T> out({av.dim(0), bv.dim(1)});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
    const auto g = detail::as_matrix(tp.grad(self));
    if (tp.requires_grad(a.id))
      detail::as_matrix(tp.grad(a.id)).noalias() += g * detail::as_matrix(tp.value(b.id)).transpose();
    if (tp.requires_grad(b.id))
      detail::as_matrix(tp.grad(b.id)).noalias() += detail::as_matrix(tp.value(a.id)).transpose() * g;
  });
}

// a * b^T, for weights stored as [out, in].
template <typename T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  const auto &av = a.value(), &bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(1)) detail::shape_mismatch("matmul_nt", av.shape(), bv.shape());
  Tensor<T> out({av.dim(0), bv.dim(0)});
  detail::as_matrix(out).noalias() = detail::as_matrix(av) * detail::as_matrix(bv).transpose();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& tp, std::size_t self) {
    const auto g = detail::as_matrix(tp.grad(self));
    if (tp.requires_grad(a.id)) detail::as_matrix(tp.grad(a.id)).noalias() += g * detail::as_matrix(tp.value(b.id));
    if (tp.requires_grad(b.id))
      detail::as_matrix(tp.grad(b.id)).noalias() += g.transpose() * detail::as_matrix(tp.value(a.id));
  });
}

namespace detail {

// Shared implementation of add/sub/mul with trailing-axis broadcasting of b.
template <typename T, typename Fwd, typename DA, typename DB>
Var<T> elementwise(const char* name, Var<T> a, Var<T> b, Fwd fwd, DA da, DB db) {
  const auto &av = a.value(), &bv = b.value();
  const Bcast kind = broadcast_kind(name, av.shape(), bv.shape());
  const std::size_t cols = kind == Bcast::Row ? bv.size() : 1;
  auto bidx = [kind, cols](std::size_t i) {
    return kind == Bcast::Same ? i : kind == Bcast::Row ? i % cols : 0;
  };
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[bidx(i)]);
  return a.tape->record(std::move(out), {a, b}, [a, b, bidx, da, db](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto &av = tp.value(a.id), &bv = tp.value(b.id);
    if (tp.requires_grad(a.id)) {
      auto& ga = tp.grad(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * da(av[i], bv[bidx(i)]);
    }
    if (tp.requires_grad(b.id)) {
      auto& gb = tp.grad(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[bidx(i)] += g[i] * db(av[i], bv[bidx(i)]);
    }
  });
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::elementwise<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::elementwise<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::elementwise<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

// slope = 0 gives a plain ReLU.
template <typename T>
Var<T> leaky_relu(Var<T> x, T slope) {
  const auto& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : slope * xv[i];
  return x.tape->record(std::move(out), {x}, [x, slope](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    const auto& xv = tp.value(x.id);
    auto& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv[i] > 0 ? g[i] : slope * g[i];
  });
}

template <typename T>
struct MaxResult {
  Var<T> values;
  std::vector<std::size_t> argmax;  // position along the reduced axis
};

// Gradient flows to the first maximal element only.
template <typename T>
MaxResult<T> max_over_axis(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const auto sp = detail::split_axis(xv.shape(), axis);
  if (sp.n == 0) fail(ErrorCode::ShapeMismatch, "max over empty axis");
  Tensor<T> out(sp.reduced);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      std::size_t best = 0;
      T best_v = xv[base];
      for (std::size_t j = 1; j < sp.n; ++j) {
        const T v = xv[base + j * sp.inner];
        if (v > best_v) {
          best_v = v;
          best = j;
        }
      }
      out[o * sp.inner + in] = best_v;
      arg[o * sp.inner + in] = best;
    }
  auto v = x.tape->record(std::move(out), {x}, [x, sp, arg](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(x.id);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t r = o * sp.inner + in;
        gx[o * sp.n * sp.inner + arg[r] * sp.inner + in] += g[r];
      }
  });
  return {v, std::move(arg)};
}

template <typename T>
Var<T> sum_over_axis(Var<T> x, std::size_t axis) {
  const auto& xv = x.value();
  const auto sp = detail::split_axis(xv.shape(), axis);
  Tensor<T> out(sp.reduced, T(0));
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < sp.n; ++j)
      for (std::size_t in = 0; in < sp.inner; ++in)
        out[o * sp.inner + in] += xv[(o * sp.n + j) * sp.inner + in];
  return x.tape->record(std::move(out), {x}, [x, sp](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(x.id);
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t j = 0; j < sp.n; ++j)
        for (std::size_t in = 0; in < sp.inner; ++in) gx[(o * sp.n + j) * sp.inner + in] += g[o * sp.inner + in];
  });
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  T s = 0;
  for (auto v : x.value().vec()) s += v;
  return x.tape->record(Tensor<T>::scalar(s), {x}, [x](Tape<T>& tp, std::size_t self) {
    const T g = tp.grad(self)[0];
    for (auto& v : tp.grad(x.id).vec()) v += g;
  });
}

// Selects rows along the first axis; backward scatter-adds.
template <typename T>
Var<T> gather_rows(Var<T> x, std::vector<std::size_t> indices) {
  const auto& xv = x.value();
  if (xv.rank() < 1) fail(ErrorCode::ShapeMismatch, "gather_rows on a scalar");
  const std::size_t n = xv.dim(0), width = xv.size() / std::max<std::size_t>(n, 1);
  Shape shape = xv.shape();
  shape[0] = indices.size();
  Tensor<T> out(shape);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= n) fail(ErrorCode::ShapeMismatch, "gather index " + std::to_string(indices[r]) + " >= " + std::to_string(n));
    std::copy_n(xv.data() + indices[r] * width, width, out.data() + r * width);
  }
  return x.tape->record(std::move(out), {x}, [x, idx = std::move(indices), width](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(x.id);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < width; ++c) gx[idx[r] * width + c] += g[r * width + c];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// Concatenates 2-D inputs along the column axis.
template <typename T>
Var<T> concat_cols(std::vector<Var<T>> parts) {
  if (parts.empty()) fail(ErrorCode::ShapeMismatch, "concat of nothing");
  const std::size_t rows = parts[0].value().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.value().rank() != 2 || p.value().rows() != rows) detail::shape_mismatch("concat_cols", parts[0].shape(), p.shape());
    cols += p.value().cols();
  }
  Tensor<T> out({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(v.data() + r * v.cols(), v.cols(), out.data() + r * cols + off);
    off += v.cols();
  }
  Tape<T>* tape = parts[0].tape;
  return tape->record(std::move(out), std::span<const Var<T>>(parts), [parts, rows, cols](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    std::size_t off = 0;
    for (const auto& p : parts) {
      const std::size_t c = tp.value(p.id).cols();
      if (tp.requires_grad(p.id)) {
        auto& gp = tp.grad(p.id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) gp[r * c + j] += g[r * cols + off + j];
      }
      off += c;
    }
  });
}

template <typename T>
struct BatchNormStats {
  Tensor<T> mean;
  Tensor<T> var;

  BatchNormStats() = default;
  explicit BatchNormStats(std::size_t features) : mean({features}, T(0)), var({features}, T(1)) {}
};

// Normalizes each feature (last axis) over all other axes. In training mode
// batch statistics are used and the running statistics are updated as
// running = momentum * running + (1 - momentum) * batch (unbiased variance).
template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormStats<T>& running, bool train, T momentum,
                  T eps = T(1e-5)) {
  const auto& xv = x.value();
  const std::size_t d = xv.cols(), rows = xv.rows();
  if (gamma.value().size() != d || beta.value().size() != d || running.mean.size() != d)
    detail::shape_mismatch("batch_norm", xv.shape(), gamma.shape());
  std::vector<T> mean(d), inv_std(d);
  if (train) {
    if (rows < 2) fail(ErrorCode::ShapeMismatch, "batch_norm training needs at least 2 rows");
    std::vector<double> s(d, 0.0), sq(d, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) s[c] += xv[r * d + c];
    for (std::size_t c = 0; c < d; ++c) s[c] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) {
        const double z = xv[r * d + c] - s[c];
        sq[c] += z * z;
      }
    for (std::size_t c = 0; c < d; ++c) {
      const double var = sq[c] / static_cast<double>(rows);
      mean[c] = static_cast<T>(s[c]);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = sq[c] / static_cast<double>(rows - 1);
      running.mean[c] = static_cast<T>(momentum * running.mean[c] + (1 - momentum) * s[c]);
      running.var[c] = static_cast<T>(momentum * running.var[c] + (1 - momentum) * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < d; ++c) {
      mean[c] = running.mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running.var[c]) + static_cast<double>(eps)));
    }
  }
  const auto &gv = gamma.value(), &bv = beta.value();
  Tensor<T> xhat(xv.shape()), out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t i = r * d + c;
      xhat[i] = (xv[i] - mean[c]) * inv_std[c];
      out[i] = gv[c] * xhat[i] + bv[c];
    }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), train, rows, d](Tape<T>& tp, std::size_t self) {
        const auto& g = tp.grad(self);
        const auto& gv = tp.value(gamma.id);
        std::vector<double> sum_g(d, 0.0), sum_gx(d, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            sum_g[c] += g[r * d + c];
            sum_gx[c] += static_cast<double>(g[r * d + c]) * xhat[r * d + c];
          }
        if (tp.requires_grad(gamma.id)) {
          auto& gg = tp.grad(gamma.id);
          for (std::size_t c = 0; c < d; ++c) gg[c] += static_cast<T>(sum_gx[c]);
        }
        if (tp.requires_grad(beta.id)) {
          auto& gb = tp.grad(beta.id);
          for (std::size_t c = 0; c < d; ++c) gb[c] += static_cast<T>(sum_g[c]);
        }
        if (!tp.requires_grad(x.id)) return;
        auto& gx = tp.grad(x.id);
        const double n = static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < d; ++c) {
            const std::size_t i = r * d + c;
            if (train) {
              const double dxhat = static_cast<double>(g[i]) * gv[c];
              const double mg = sum_g[c] * gv[c] / n, mgx = sum_gx[c] * gv[c] / n;
              gx[i] += static_cast<T>(inv_std[c] * (dxhat - mg - xhat[i] * mgx));
            } else {
              gx[i] += g[i] * gv[c] * inv_std[c];
            }
          }
      });
}

// Inverted dropout: kept units are scaled by 1/keep_prob during training so
// evaluation is the identity.
template <typename T>
Var<T> dropout(Var<T> x, double keep_prob, bool train, Rng& rng) {
  if (!(keep_prob > 0 && keep_prob <= 1)) fail(ErrorCode::InvalidArgument, "keep_prob must be in (0, 1]");
  if (!train || keep_prob == 1.0) return x;
  const auto& xv = x.value();
  std::vector<T> mask(xv.size());
  const T scale = static_cast<T>(1.0 / keep_prob);
  for (auto& m : mask) m = rng.uniform() < keep_prob ? scale : T(0);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  return x.tape->record(std::move(out), {x}, [x, mask = std::move(mask)](Tape<T>& tp, std::size_t self) {
    const auto& g = tp.grad(self);
    auto& gx = tp.grad(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
  });
}

// Mean softmax cross-entropy over the rows of [B, C] logits.
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::uint32_t> labels) {
  const auto& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size())
    fail(ErrorCode::ShapeMismatch, "softmax_cross_entropy: logits " + shape_str(lv.shape()) + " vs " +
                                       std::to_string(labels.size()) + " labels");
  const std::size_t b = lv.dim(0), c = lv.dim(1);
  Tensor<T> probs({b, c});
  double total = 0;
  for (std::size_t r = 0; r < b; ++r) {
    if (labels[r] >= c) fail(ErrorCode::ShapeMismatch, "label " + std::to_string(labels[r]) + " >= class count");
    const T* row = lv.data() + r * c;
    const T m = *std::max_element(row, row + c);
    double z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(row[j] - m));
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - m)) / z);
    total += std::log(z) - static_cast<double>(row[labels[r]] - m);
  }
  std::vector<std::uint32_t> lab(labels.begin(), labels.end());
  return logits.tape->record(Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(b))), {logits},
                             [logits, probs = std::move(probs), lab = std::move(lab), b, c](Tape<T>& tp, std::size_t self) {
                               const T g = tp.grad(self)[0] / static_cast<T>(b);
                               auto& gl = tp.grad(logits.id);
                               for (std::size_t r = 0; r < b; ++r)
                                 for (std::size_t j = 0; j < c; ++j)
                                   gl[r * c + j] += g * (probs[r * c + j] - (j == lab[r] ? T(1) : T(0)));
                             });
}

}  // namespace shapegraph
