// Reverse-mode automatic differentiation over dense row-major Eigen matrices.
//
// Every differentiable quantity is a Var<Scalar> wrapping a 2-D matrix.
// Higher-rank tensors are stored flattened: an N x H x W x C tensor is an
// (N*H*W) x C matrix whose rows are ordered (n, y, x).
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace utt {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

namespace ad {

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Scalar>
struct Node {
  Mat<Scalar> value;
  Mat<Scalar> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Mat<Scalar>&)> backward_fn;

  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

template <typename Scalar>
class Var {
 public:
  using NodePtr = std::shared_ptr<Node<Scalar>>;

  Var() : node_(std::make_shared<Node<Scalar>>()) {}
  explicit Var(Mat<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node<Scalar>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Mat<Scalar>& value() const { return node_->value; }
  Mat<Scalar>& mutable_value() const { return node_->value; }

  /// Gradient accumulated by backward(); zeros if none has arrived.
  Mat<Scalar> grad() const {
    if (node_->grad.size() == 0) return Mat<Scalar>::Zero(rows(), cols());
    return node_->grad;
  }
  bool has_grad() const { return node_->grad.size() != 0; }
  void zero_grad() const { node_->grad.resize(0, 0); }

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Eigen::Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const NodePtr& node() const { return node_; }

  Scalar item() const {
    if (size() != 1) throw std::logic_error("item() on a non-scalar Var");
    return node_->value(0, 0);
  }

 private:
  NodePtr node_;
};

template <typename Scalar>
Var<Scalar> constant(Mat<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

template <typename Scalar>
Var<Scalar> parameter(Mat<Scalar> value) {
  return Var<Scalar>(std::move(value), true);
}

/// Builds a result node. The backward closure runs only when some parent
/// requires a gradient and recording is enabled.
template <typename Scalar, typename Backward>
Var<Scalar> make_result(Mat<Scalar> value, std::initializer_list<Var<Scalar>> parents,
                        Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& p : parents) {
        if (p.requires_grad()) node->parents.push_back(p.node());
      }
      node->backward_fn = std::forward<Backward>(backward);
    }
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar, typename Backward>
Var<Scalar> make_result(Mat<Scalar> value, const std::vector<Var<Scalar>>& parents,
                        Backward&& backward) {
  auto node = std::make_shared<Node<Scalar>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      node->requires_grad = true;
      for (const auto& p : parents) {
        if (p.requires_grad()) node->parents.push_back(p.node());
      }
      node->backward_fn = std::forward<Backward>(backward);
    }
  }
  return Var<Scalar>(std::move(node));
}

template <typename Scalar, typename Derived>
inline void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& g) {
  if (v.requires_grad()) v.node()->accumulate(g);
}

/// Back-propagates from `root`, seeding its gradient with `seed` (ones if empty).
template <typename Scalar>
void backward(const Var<Scalar>& root, const Mat<Scalar>& seed = Mat<Scalar>()) {
  if (!root.requires_grad()) return;
  using NodeT = Node<Scalar>;
  std::vector<NodeT*> order;
  std::unordered_set<NodeT*> visited;
  // Iterative post-order DFS.
  std::vector<std::pair<NodeT*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT* parent = node->parents[next++].get();
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  if (seed.size() == 0) {
    root.node()->accumulate(Mat<Scalar>::Ones(root.rows(), root.cols()));
  } else {
    root.node()->accumulate(seed);
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT* node = *it;
    if (node->backward_fn && node->grad.size() != 0) {
      node->backward_fn(node->grad);
      // Interior gradients are not needed once propagated.
      node->grad.resize(0, 0);
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra operations.

template <typename Scalar>
Var<Scalar> detach(const Var<Scalar>& a) {
  return constant<Scalar>(a.value());
}

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  return make_result<Scalar>(a.value() * b.value(), {a, b}, [a, b](const Mat<Scalar>& g) {
    if (a.requires_grad()) a.node()->accumulate(g * b.value().transpose());
    if (b.requires_grad()) b.node()->accumulate(a.value().transpose() * g);
  });
}

/// a * b^T
template <typename Scalar>
Var<Scalar> matmul_nt(const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  return make_result<Scalar>(a.value() * b.value().transpose(), {a, b},
                             [a, b](const Mat<Scalar>& g) {
                               if (a.requires_grad()) a.node()->accumulate(g * b.value());
                               if (b.requires_grad())
                                 b.node()->accumulate(g.transpose() * a.value());
                             });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  Mat<Scalar> v = a.value().transpose();
  return make_result<Scalar>(std::move(v), {a}, [a](const Mat<Scalar>& g) {
    a.node()->accumulate(g.transpose());
  });
}

inline void check_same_shape(Eigen::Index ar, Eigen::Index ac, Eigen::Index br, Eigen::Index bc,
                             const char* op) {
  if (ar != br || ac != bc) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "add");
  return make_result<Scalar>(a.value() + b.value(), {a, b}, [a, b](const Mat<Scalar>& g) {
    accumulate(a, g);
    accumulate(b, g);
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "sub");
  return make_result<Scalar>(a.value() - b.value(), {a, b}, [a, b](const Mat<Scalar>& g) {
    accumulate(a, g);
    accumulate(b, -g);
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "mul");
  Mat<Scalar> v = a.value().cwiseProduct(b.value());
  return make_result<Scalar>(std::move(v), {a, b}, [a, b](const Mat<Scalar>& g) {
    accumulate(a, g.cwiseProduct(b.value()));
    accumulate(b, g.cwiseProduct(a.value()));
  });
}

template <typename Scalar>
Var<Scalar> div(const Var<Scalar>& a, const Var<Scalar>& b) {
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "div");
  Mat<Scalar> v = a.value().cwiseQuotient(b.value());
  return make_result<Scalar>(v, {a, b}, [a, b, v](const Mat<Scalar>& g) {
    accumulate(a, g.cwiseQuotient(b.value()));
    accumulate(b, -g.cwiseProduct(v).cwiseQuotient(b.value()));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar s) {
  return make_result<Scalar>(a.value() * s, {a},
                             [a, s](const Mat<Scalar>& g) { a.node()->accumulate(g * s); });
}

template <typename Scalar>
Var<Scalar> add_scalar(const Var<Scalar>& a, Scalar s) {
  Mat<Scalar> v = a.value().array() + s;
  return make_result<Scalar>(std::move(v), {a},
                             [a](const Mat<Scalar>& g) { a.node()->accumulate(g); });
}

/// Adds a 1 x C row to every row of an R x C matrix.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
  if (row.rows() != 1 || row.cols() != a.cols())
    throw std::invalid_argument("add_row: expected a 1 x C row");
  Mat<Scalar> v = a.value().rowwise() + row.value().row(0);
  return make_result<Scalar>(std::move(v), {a, row}, [a, row](const Mat<Scalar>& g) {
    accumulate(a, g);
    accumulate(row, g.colwise().sum());
  });
}

/// Scales row r of `a` by col(r, 0).
template <typename Scalar>
Var<Scalar> mul_col(const Var<Scalar>& a, const Var<Scalar>& col) {
  if (col.cols() != 1 || col.rows() != a.rows())
    throw std::invalid_argument("mul_col: expected an R x 1 column");
  Mat<Scalar> v = a.value().array().colwise() * col.value().col(0).array();
  return make_result<Scalar>(std::move(v), {a, col}, [a, col](const Mat<Scalar>& g) {
    if (a.requires_grad())
      a.node()->accumulate(Mat<Scalar>(g.array().colwise() * col.value().col(0).array()));
    if (col.requires_grad())
      col.node()->accumulate(g.cwiseProduct(a.value()).rowwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
  Mat<Scalar> v = a.value().cwiseMax(Scalar(0));
  return make_result<Scalar>(std::move(v), {a}, [a](const Mat<Scalar>& g) {
    a.node()->accumulate(
        Mat<Scalar>((a.value().array() > Scalar(0)).select(g.array(), Scalar(0))));
  });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
  Mat<Scalar> v = a.value().array().exp();
  return make_result<Scalar>(v, {a}, [a, v](const Mat<Scalar>& g) {
    a.node()->accumulate(g.cwiseProduct(v));
  });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
  Mat<Scalar> v = a.value().cwiseAbs();
  return make_result<Scalar>(std::move(v), {a}, [a](const Mat<Scalar>& g) {
    a.node()->accumulate(Mat<Scalar>(g.array() * a.value().array().sign()));
  });
}

/// Elementwise minimum; ties route the gradient to `a`.
template <typename Scalar>
Var<Scalar> minimum(const Var<Scalar>& a, const Var<Scalar>& b) {
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "minimum");
  Mat<Scalar> v = a.value().cwiseMin(b.value());
  return make_result<Scalar>(std::move(v), {a, b}, [a, b](const Mat<Scalar>& g) {
    auto take_a = (a.value().array() <= b.value().array());
    accumulate(a, Mat<Scalar>(take_a.select(g.array(), Scalar(0))));
    accumulate(b, Mat<Scalar>(take_a.select(Scalar(0), g.array())));
  });
}

/// Elementwise maximum; ties route the gradient to `a`.
template <typename Scalar>
Var<Scalar> maximum(const Var<Scalar>& a, const Var<Scalar>& b) {
  check_same_shape(a.rows(), a.cols(), b.rows(), b.cols(), "maximum");
  Mat<Scalar> v = a.value().cwiseMax(b.value());
  return make_result<Scalar>(std::move(v), {a, b}, [a, b](const Mat<Scalar>& g) {
    auto take_a = (a.value().array() >= b.value().array());
    accumulate(a, Mat<Scalar>(take_a.select(g.array(), Scalar(0))));
    accumulate(b, Mat<Scalar>(take_a.select(Scalar(0), g.array())));
  });
}

template <typename Scalar>
Var<Scalar> clamp_max(const Var<Scalar>& a, Scalar hi) {
  Mat<Scalar> v = a.value().cwiseMin(hi);
  return make_result<Scalar>(std::move(v), {a}, [a, hi](const Mat<Scalar>& g) {
    a.node()->accumulate(Mat<Scalar>((a.value().array() <= hi).select(g.array(), Scalar(0))));
  });
}

template <typename Scalar>
Var<Scalar> clamp_min(const Var<Scalar>& a, Scalar lo) {
  Mat<Scalar> v = a.value().cwiseMax(lo);
  return make_result<Scalar>(std::move(v), {a}, [a, lo](const Mat<Scalar>& g) {
    a.node()->accumulate(Mat<Scalar>((a.value().array() >= lo).select(g.array(), Scalar(0))));
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Mat<Scalar> v(1, 1);
  v(0, 0) = a.value().sum();
  return make_result<Scalar>(std::move(v), {a}, [a](const Mat<Scalar>& g) {
    a.node()->accumulate(Mat<Scalar>::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
  if (a.size() == 0) return constant<Scalar>(Mat<Scalar>::Zero(1, 1));
  return scale(sum(a), Scalar(1) / static_cast<Scalar>(a.size()));
}

/// Sum over columns, R x C -> R x 1.
template <typename Scalar>
Var<Scalar> row_sum(const Var<Scalar>& a) {
  Mat<Scalar> v = a.value().rowwise().sum();
  return make_result<Scalar>(std::move(v), {a}, [a](const Mat<Scalar>& g) {
    a.node()->accumulate(g.col(0).replicate(1, a.cols()));
  });
}

/// Row-major reinterpretation to rows x cols.
template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.size()) throw std::invalid_argument("reshape: size mismatch");
  Mat<Scalar> v = Eigen::Map<const Mat<Scalar>>(a.value().data(), rows, cols);
  return make_result<Scalar>(std::move(v), {a}, [a](const Mat<Scalar>& g) {
    a.node()->accumulate(Eigen::Map<const Mat<Scalar>>(g.data(), a.rows(), a.cols()));
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  Mat<Scalar> v = a.value().middleCols(start, count);
  return make_result<Scalar>(std::move(v), {a}, [a, start, count](const Mat<Scalar>& g) {
    Mat<Scalar> full = Mat<Scalar>::Zero(a.rows(), a.cols());
    full.middleCols(start, count) = g;
    a.node()->accumulate(full);
  });
}

template <typename Scalar>
Var<Scalar> slice_rows(const Var<Scalar>& a, Eigen::Index start, Eigen::Index count) {
  Mat<Scalar> v = a.value().middleRows(start, count);
  return make_result<Scalar>(std::move(v), {a}, [a, start, count](const Mat<Scalar>& g) {
    Mat<Scalar> full = Mat<Scalar>::Zero(a.rows(), a.cols());
    full.middleRows(start, count) = g;
    a.node()->accumulate(full);
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no inputs");
  Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<Scalar> v(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    v.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return make_result<Scalar>(std::move(v), parts, [parts](const Mat<Scalar>& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

template <typename Scalar>
Var<Scalar> concat_rows(const std::vector<Var<Scalar>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<Scalar> v(rows, cols);
  Eigen::Index offset = 0;
  for (const auto& p : parts) {
    v.middleRows(offset, p.rows()) = p.value();
    offset += p.rows();
  }
  return make_result<Scalar>(std::move(v), parts, [parts](const Mat<Scalar>& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

/// Selects rows by index; gradients scatter-add back.
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& a, const std::vector<Eigen::Index>& index) {
  Mat<Scalar> v(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t i = 0; i < index.size(); ++i) v.row(i) = a.value().row(index[i]);
  return make_result<Scalar>(std::move(v), {a}, [a, index](const Mat<Scalar>& g) {
    Mat<Scalar> full = Mat<Scalar>::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) full.row(index[i]) += g.row(i);
    a.node()->accumulate(full);
  });
}

/// Treats `a` as `batches` stacked (R/batches) x C blocks and transposes each,
/// yielding (batches*C) x (R/batches).
template <typename Scalar>
Var<Scalar> batched_transpose(const Var<Scalar>& a, Eigen::Index batches) {
  if (batches <= 0 || a.rows() % batches != 0)
    throw std::invalid_argument("batched_transpose: rows not divisible by batch count");
  const Eigen::Index r = a.rows() / batches;
  const Eigen::Index c = a.cols();
  Mat<Scalar> v(batches * c, r);
  for (Eigen::Index b = 0; b < batches; ++b) {
    v.middleRows(b * c, c) = a.value().middleRows(b * r, r).transpose();
  }
  return make_result<Scalar>(std::move(v), {a}, [a, batches, r, c](const Mat<Scalar>& g) {
    Mat<Scalar> back(batches * r, c);
    for (Eigen::Index b = 0; b < batches; ++b) {
      back.middleRows(b * r, r) = g.middleRows(b * c, c).transpose();
    }
    a.node()->accumulate(back);
  });
}

/// Averages consecutive groups of `group` rows: (N*group) x C -> N x C.
template <typename Scalar>
Var<Scalar> mean_pool_rows(const Var<Scalar>& a, Eigen::Index group) {
  if (group <= 0 || a.rows() % group != 0)
    throw std::invalid_argument("mean_pool_rows: rows not divisible by group");
  const Eigen::Index n = a.rows() / group;
  Mat<Scalar> v(n, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    v.row(i) = a.value().middleRows(i * group, group).colwise().mean();
  }
  return make_result<Scalar>(std::move(v), {a}, [a, n, group](const Mat<Scalar>& g) {
    Mat<Scalar> back(a.rows(), a.cols());
    const Scalar inv = Scalar(1) / static_cast<Scalar>(group);
    for (Eigen::Index i = 0; i < n; ++i) {
      back.middleRows(i * group, group) = (g.row(i) * inv).replicate(group, 1);
    }
    a.node()->accumulate(back);
  });
}

/// Row-wise softmax.
template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  Mat<Scalar> v = a.value();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    auto row = v.row(r);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
  return make_result<Scalar>(v, {a}, [a, v](const Mat<Scalar>& g) {
    Mat<Scalar> dot = g.cwiseProduct(v).rowwise().sum();
    Mat<Scalar> back = v.cwiseProduct(Mat<Scalar>(g.colwise() - dot.col(0)));
    a.node()->accumulate(back);
  });
}

/// Per-row normalization over columns followed by a learned affine map.
template <typename Scalar>
Var<Scalar> layer_norm_rows(const Var<Scalar>& x, const Var<Scalar>& gamma,
                            const Var<Scalar>& beta, Scalar eps) {
  const Eigen::Index n = x.rows();
  const Eigen::Index c = x.cols();
  Mat<Scalar> xhat(n, c);
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Scalar mu = x.value().row(r).mean();
    auto centered = (x.value().row(r).array() - mu);
    const Scalar var = centered.square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = centered * inv_std(r);
  }
  Mat<Scalar> v = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                  beta.value().row(0).array();
  return make_result<Scalar>(
      std::move(v), {x, gamma, beta}, [x, gamma, beta, xhat, inv_std, c](const Mat<Scalar>& g) {
        if (gamma.requires_grad())
          gamma.node()->accumulate(g.cwiseProduct(xhat).colwise().sum());
        if (beta.requires_grad()) beta.node()->accumulate(g.colwise().sum());
        if (x.requires_grad()) {
          Mat<Scalar> dxhat = g.array().rowwise() * gamma.value().row(0).array();
          Mat<Scalar> back(dxhat.rows(), c);
          for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
            const Scalar m1 = dxhat.row(r).mean();
            const Scalar m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
            back.row(r) =
                (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
          }
          x.node()->accumulate(back);
        }
      });
}

template <typename Scalar>
Var<Scalar> operator+(const Var<Scalar>& a, const Var<Scalar>& b) { return add(a, b); }
template <typename Scalar>
Var<Scalar> operator-(const Var<Scalar>& a, const Var<Scalar>& b) { return sub(a, b); }
template <typename Scalar>
Var<Scalar> operator*(const Var<Scalar>& a, Scalar s) { return scale(a, s); }

}  // namespace ad
}  // namespace utt
