#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "cgmm/common.hpp"
#include "cgmm/tensor.hpp"

// Differentiable operations. Each op computes its forward value eagerly and
// installs a backward closure on the output node. Dense products go through
// Eigen; everything else is plain loops. All ops allocate fresh outputs --
// graph tensors are never mutated in place.

namespace cgmm {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

namespace detail {

inline Tensor op(std::vector<int> shape, const std::vector<Tensor>& parents) {
  Tensor out = Tensor::zeros(std::move(shape));
  for (const Tensor& p : parents) {
    out.node->parents.push_back(p.node);
    if (p.node->requires_grad) out.node->requires_grad = true;
  }
  return out;
}

inline int last_dim(const Tensor& t) { return t.shape().back(); }

inline int row_count(const Tensor& t) {
  return static_cast<int>(t.numel()) / last_dim(t);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// dense products
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw validation_error("matmul dimension mismatch: " + shape_str(a.shape()) +
                           " x " + shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = detail::op({m, n}, {a, b});
  ECMap A(a.data().data(), m, k);
  ECMap B(b.data().data(), k, n);
  EMap C(out.data().data(), m, n);
  C.noalias() = A * B;
  auto an = a.node, bn = b.node, on = out.node;
  out.node->backward = [an, bn, on, m, k, n] {
    on->ensure_grad();
    ECMap dC(on->grad.data(), m, n);
    if (an->requires_grad) {
      an->ensure_grad();
      EMap dA(an->grad.data(), m, k);
      ECMap Bv(bn->data.data(), k, n);
      dA.noalias() += dC * Bv.transpose();
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      EMap dB(bn->grad.data(), k, n);
      ECMap Av(an->data.data(), m, k);
      dB.noalias() += Av.transpose() * dC;
    }
  };
  return out;
}

inline Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) throw validation_error("transpose expects a matrix, got " + shape_str(x.shape()));
  const int m = x.dim(0), n = x.dim(1);
  Tensor out = detail::op({n, m}, {x});
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      out.data()[static_cast<std::size_t>(j) * m + i] = x.data()[static_cast<std::size_t>(i) * n + j];
    }
  }
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, m, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) {
        xn->grad[static_cast<std::size_t>(i) * n + j] += on->grad[static_cast<std::size_t>(j) * m + i];
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw validation_error(std::string(what) + " shape mismatch: " + shape_str(a.shape()) +
                           " vs " + shape_str(b.shape()));
  }
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = detail::op(a.shape(), {a, b});
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  auto an = a.node, bn = b.node, on = out.node;
  out.node->backward = [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i];
    }
  };
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = detail::op(a.shape(), {a, b});
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  auto an = a.node, bn = b.node, on = out.node;
  out.node->backward = [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] -= on->grad[i];
    }
  };
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = detail::op(a.shape(), {a, b});
  const std::size_t n = a.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  auto an = a.node, bn = b.node, on = out.node;
  out.node->backward = [an, bn, on, n] {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += on->grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += on->grad[i] * an->data[i];
    }
  };
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor out = detail::op(x.shape(), {x});
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] * c;
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, c, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i] * c;
  };
  return out;
}

/// Adds a constant array (same length as x). Not a graph edge; gradient
/// passes straight through. Used for additive attention masks.
inline Tensor add_const(const Tensor& x, std::vector<double> c) {
  if (c.size() != x.numel()) throw validation_error("add_const length mismatch");
  Tensor out = detail::op(x.shape(), {x});
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] + c[i];
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i];
  };
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out = detail::op(x.shape(), {x});
  const std::size_t n = x.numel();
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, n] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    // subgradient 0 at the kink
    for (std::size_t i = 0; i < n; ++i) {
      if (xn->data[i] > 0.0) xn->grad[i] += on->grad[i];
    }
  };
  return out;
}

/// Broadcast-add a row vector v[C] to every row of x[R x C].
inline Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  const int c = detail::last_dim(x);
  if (v.ndim() != 1 || v.dim(0) != c) {
    throw validation_error("add_rowvec: vector " + shape_str(v.shape()) +
                           " does not match last dim of " + shape_str(x.shape()));
  }
  const int r = detail::row_count(x);
  Tensor out = detail::op(x.shape(), {x, v});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      out.data()[static_cast<std::size_t>(i) * c + j] =
          x.data()[static_cast<std::size_t>(i) * c + j] + v.data()[static_cast<std::size_t>(j)];
    }
  }
  auto xn = x.node, vn = v.node, on = out.node;
  out.node->backward = [xn, vn, on, r, c] {
    if (xn->requires_grad) {
      xn->ensure_grad();
      const std::size_t n = static_cast<std::size_t>(r) * c;
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i];
    }
    if (vn->requires_grad) {
      vn->ensure_grad();
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < c; ++j) {
          vn->grad[static_cast<std::size_t>(j)] += on->grad[static_cast<std::size_t>(i) * c + j];
        }
      }
    }
  };
  return out;
}

/// Broadcast-add a per-channel bias b[C] to x[C x H x W].
inline Tensor add_chan(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 3 || b.ndim() != 1 || b.dim(0) != x.dim(0)) {
    throw validation_error("add_chan: bias " + shape_str(b.shape()) +
                           " does not match channels of " + shape_str(x.shape()));
  }
  const int c = x.dim(0);
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  Tensor out = detail::op(x.shape(), {x, b});
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < plane; ++i) {
      out.data()[ch * plane + i] = x.data()[ch * plane + i] + b.data()[static_cast<std::size_t>(ch)];
    }
  }
  auto xn = x.node, bn = b.node, on = out.node;
  out.node->backward = [xn, bn, on, c, plane] {
    if (xn->requires_grad) {
      xn->ensure_grad();
      const std::size_t n = static_cast<std::size_t>(c) * plane;
      for (std::size_t i = 0; i < n; ++i) xn->grad[i] += on->grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < plane; ++i) s += on->grad[ch * plane + i];
        bn->grad[static_cast<std::size_t>(ch)] += s;
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, std::vector<int> shape) {
  std::size_t n = 1;
  for (int e : shape) n *= static_cast<std::size_t>(e);
  if (n != x.numel()) {
    throw validation_error("reshape to " + shape_str(shape) + " from " + shape_str(x.shape()));
  }
  Tensor out = detail::op(std::move(shape), {x});
  out.data() = x.data();
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
  };
  return out;
}

inline Tensor slice_cols(const Tensor& x, int offset, int len) {
  if (x.ndim() != 2) throw validation_error("slice_cols expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  if (offset < 0 || len <= 0 || offset + len > c) {
    throw validation_error("slice_cols range [" + std::to_string(offset) + ", " +
                           std::to_string(offset + len) + ") out of " + std::to_string(c));
  }
  Tensor out = detail::op({r, len}, {x});
  for (int i = 0; i < r; ++i) {
    std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i) * c + offset, len,
                out.data().begin() + static_cast<std::ptrdiff_t>(i) * len);
  }
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, r, c, offset, len] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < len; ++j) {
        xn->grad[static_cast<std::size_t>(i) * c + offset + j] +=
            on->grad[static_cast<std::size_t>(i) * len + j];
      }
    }
  };
  return out;
}

inline Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw validation_error("concat_cols of nothing");
  const int r = xs[0].dim(0);
  int total = 0;
  for (const Tensor& t : xs) {
    if (t.ndim() != 2 || t.dim(0) != r) throw validation_error("concat_cols row mismatch");
    total += t.dim(1);
  }
  Tensor out = detail::op({r, total}, xs);
  int off = 0;
  for (const Tensor& t : xs) {
    const int c = t.dim(1);
    for (int i = 0; i < r; ++i) {
      std::copy_n(t.data().begin() + static_cast<std::ptrdiff_t>(i) * c, c,
                  out.data().begin() + static_cast<std::ptrdiff_t>(i) * total + off);
    }
    off += c;
  }
  auto on = out.node;
  std::vector<std::shared_ptr<TensorNode>> parents = on->parents;
  out.node->backward = [parents, on, r, total] {
    int off2 = 0;
    for (const auto& pn : parents) {
      const int c = pn->shape[1];
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < c; ++j) {
            pn->grad[static_cast<std::size_t>(i) * c + j] +=
                on->grad[static_cast<std::size_t>(i) * total + off2 + j];
          }
        }
      }
      off2 += c;
    }
  };
  return out;
}

/// Concatenate 1-d tensors into one vector.
inline Tensor concat_vec(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw validation_error("concat_vec of nothing");
  int total = 0;
  for (const Tensor& t : xs) {
    if (t.ndim() != 1) throw validation_error("concat_vec expects vectors");
    total += t.dim(0);
  }
  Tensor out = detail::op({total}, xs);
  int off = 0;
  for (const Tensor& t : xs) {
    std::copy_n(t.data().begin(), t.dim(0), out.data().begin() + off);
    off += t.dim(0);
  }
  auto on = out.node;
  std::vector<std::shared_ptr<TensorNode>> parents = on->parents;
  out.node->backward = [parents, on] {
    int off2 = 0;
    for (const auto& pn : parents) {
      const int c = pn->shape[0];
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (int j = 0; j < c; ++j) pn->grad[static_cast<std::size_t>(j)] += on->grad[static_cast<std::size_t>(off2 + j)];
      }
      off2 += c;
    }
  };
  return out;
}

/// Stack 1-d tensors of equal length into a matrix, one per row.
inline Tensor stack_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw validation_error("stack_rows of nothing");
  const int d = xs[0].dim(0);
  for (const Tensor& t : xs) {
    if (t.ndim() != 1 || t.dim(0) != d) throw validation_error("stack_rows length mismatch");
  }
  const int n = static_cast<int>(xs.size());
  Tensor out = detail::op({n, d}, xs);
  for (int i = 0; i < n; ++i) {
    std::copy_n(xs[static_cast<std::size_t>(i)].data().begin(), d,
                out.data().begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  auto on = out.node;
  std::vector<std::shared_ptr<TensorNode>> parents = on->parents;
  out.node->backward = [parents, on, d] {
    for (std::size_t i = 0; i < parents.size(); ++i) {
      const auto& pn = parents[i];
      if (!pn->requires_grad) continue;
      pn->ensure_grad();
      for (int j = 0; j < d; ++j) pn->grad[static_cast<std::size_t>(j)] += on->grad[i * d + j];
    }
  };
  return out;
}

inline Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw validation_error("concat_rows of nothing");
  const int c = xs[0].dim(1);
  int total = 0;
  for (const Tensor& t : xs) {
    if (t.ndim() != 2 || t.dim(1) != c) throw validation_error("concat_rows column mismatch");
    total += t.dim(0);
  }
  Tensor out = detail::op({total, c}, xs);
  std::size_t off = 0;
  for (const Tensor& t : xs) {
    std::copy_n(t.data().begin(), t.numel(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    off += t.numel();
  }
  auto on = out.node;
  std::vector<std::shared_ptr<TensorNode>> parents = on->parents;
  out.node->backward = [parents, on] {
    std::size_t off2 = 0;
    for (const auto& pn : parents) {
      if (pn->requires_grad) {
        pn->ensure_grad();
        for (std::size_t i = 0; i < pn->data.size(); ++i) pn->grad[i] += on->grad[off2 + i];
      }
      off2 += pn->data.size();
    }
  };
  return out;
}

inline Tensor slice_rows(const Tensor& x, int offset, int len) {
  if (x.ndim() != 2) throw validation_error("slice_rows expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  if (offset < 0 || len <= 0 || offset + len > r) {
    throw validation_error("slice_rows range [" + std::to_string(offset) + ", " +
                           std::to_string(offset + len) + ") out of " + std::to_string(r));
  }
  Tensor out = detail::op({len, c}, {x});
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(offset) * c,
              static_cast<std::size_t>(len) * c, out.data().begin());
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, offset, c] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < on->grad.size(); ++i) {
      xn->grad[static_cast<std::size_t>(offset) * c + i] += on->grad[i];
    }
  };
  return out;
}

/// Extract row i of a matrix as a vector.
inline Tensor take_row(const Tensor& x, int i) {
  if (x.ndim() != 2 || i < 0 || i >= x.dim(0)) throw validation_error("take_row out of range");
  const int c = x.dim(1);
  Tensor out = detail::op({c}, {x});
  std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(i) * c, c, out.data().begin());
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, i, c] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int j = 0; j < c; ++j) xn->grad[static_cast<std::size_t>(i) * c + j] += on->grad[static_cast<std::size_t>(j)];
  };
  return out;
}

// ---------------------------------------------------------------------------
// normalizations and reductions
// ---------------------------------------------------------------------------

/// Softmax along the last axis, computed with max subtraction. Outputs are
/// positive and sum to 1 per row for any finite input.
inline Tensor softmax(const Tensor& x) {
  const int c = detail::last_dim(x);
  const int r = detail::row_count(x);
  if (c < 1) throw validation_error("softmax on empty axis");
  Tensor out = detail::op(x.shape(), {x});
  for (int i = 0; i < r; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * c;
    double* orow = out.data().data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (int j = 0; j < c; ++j) {
      orow[j] = std::exp(row[j] - mx);
      sum += orow[j];
    }
    for (int j = 0; j < c; ++j) orow[j] /= sum;
  }
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, r, c] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* y = on->data.data() + static_cast<std::size_t>(i) * c;
      const double* dy = on->grad.data() + static_cast<std::size_t>(i) * c;
      double* dx = xn->grad.data() + static_cast<std::size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (int j = 0; j < c; ++j) dx[j] += (dy[j] - dot) * y[j];
    }
  };
  return out;
}

/// Layer norm along the last axis: (x - mean) / sqrt(var + eps) * gain + bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  const int c = detail::last_dim(x);
  const int r = detail::row_count(x);
  if (c < 1) throw validation_error("layer_norm on empty axis");
  if (gain.ndim() != 1 || gain.dim(0) != c || bias.ndim() != 1 || bias.dim(0) != c) {
    throw validation_error("layer_norm gain/bias must match last dim " + std::to_string(c));
  }
  Tensor out = detail::op(x.shape(), {x, gain, bias});
  std::vector<double> inv_sigma(static_cast<std::size_t>(r));
  std::vector<double> mean(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += row[j];
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= c;
    const double is = 1.0 / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(i)] = mu;
    inv_sigma[static_cast<std::size_t>(i)] = is;
    double* orow = out.data().data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) {
      orow[j] = (row[j] - mu) * is * gain.data()[static_cast<std::size_t>(j)] +
                bias.data()[static_cast<std::size_t>(j)];
    }
  }
  auto xn = x.node, gn = gain.node, bn = bias.node, on = out.node;
  out.node->backward = [xn, gn, bn, on, r, c, mean, inv_sigma] {
    for (int i = 0; i < r; ++i) {
      const double* row = xn->data.data() + static_cast<std::size_t>(i) * c;
      const double* dy = on->grad.data() + static_cast<std::size_t>(i) * c;
      const double mu = mean[static_cast<std::size_t>(i)];
      const double is = inv_sigma[static_cast<std::size_t>(i)];
      if (gn->requires_grad || bn->requires_grad) {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        for (int j = 0; j < c; ++j) {
          const double xhat = (row[j] - mu) * is;
          if (gn->requires_grad) gn->grad[static_cast<std::size_t>(j)] += dy[j] * xhat;
          if (bn->requires_grad) bn->grad[static_cast<std::size_t>(j)] += dy[j];
        }
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        double* dx = xn->grad.data() + static_cast<std::size_t>(i) * c;
        // dxhat = dy * gain; dx = is * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (int j = 0; j < c; ++j) {
          const double xhat = (row[j] - mu) * is;
          const double dxh = dy[j] * gn->data[static_cast<std::size_t>(j)];
          mean_dxhat += dxh;
          mean_dxhat_xhat += dxh * xhat;
        }
        mean_dxhat /= c;
        mean_dxhat_xhat /= c;
        for (int j = 0; j < c; ++j) {
          const double xhat = (row[j] - mu) * is;
          const double dxh = dy[j] * gn->data[static_cast<std::size_t>(j)];
          dx[j] += is * (dxh - mean_dxhat - xhat * mean_dxhat_xhat);
        }
      }
    }
  };
  return out;
}

/// Row-wise L2 normalization. Rows with norm below `min_norm` raise a
/// numeric_error naming the offending row.
inline Tensor rows_l2_normalize(const Tensor& x, double min_norm = 1e-12) {
  if (x.ndim() != 2) throw validation_error("rows_l2_normalize expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  Tensor out = detail::op(x.shape(), {x});
  std::vector<double> norms(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * c;
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += row[j] * row[j];
    const double nrm = std::sqrt(s);
    if (nrm < min_norm) {
      throw numeric_error("embedding " + std::to_string(i) + " has zero norm, cannot normalize");
    }
    norms[static_cast<std::size_t>(i)] = nrm;
    double* orow = out.data().data() + static_cast<std::size_t>(i) * c;
    for (int j = 0; j < c; ++j) orow[j] = row[j] / nrm;
  }
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, r, c, norms] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* y = on->data.data() + static_cast<std::size_t>(i) * c;
      const double* dy = on->grad.data() + static_cast<std::size_t>(i) * c;
      double* dx = xn->grad.data() + static_cast<std::size_t>(i) * c;
      const double nrm = norms[static_cast<std::size_t>(i)];
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += dy[j] * y[j];
      for (int j = 0; j < c; ++j) dx[j] += (dy[j] - dot * y[j]) / nrm;
    }
  };
  return out;
}

/// L2-normalize a vector; an (exactly or nearly) zero vector maps to zero.
/// The zero convention carries masked-out modalities through contrastive
/// embeddings without special cases upstream.
inline Tensor l2_normalize_or_zero(const Tensor& x, double min_norm = 1e-12) {
  if (x.ndim() != 1) throw validation_error("l2_normalize_or_zero expects a vector");
  const int c = x.dim(0);
  double s = 0.0;
  for (int j = 0; j < c; ++j) s += x.data()[static_cast<std::size_t>(j)] * x.data()[static_cast<std::size_t>(j)];
  const double nrm = std::sqrt(s);
  Tensor out = detail::op(x.shape(), {x});
  if (nrm < min_norm) return out;  // zeros, no gradient flow
  for (int j = 0; j < c; ++j) out.data()[static_cast<std::size_t>(j)] = x.data()[static_cast<std::size_t>(j)] / nrm;
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, c, nrm] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    double dot = 0.0;
    for (int j = 0; j < c; ++j) dot += on->grad[static_cast<std::size_t>(j)] * on->data[static_cast<std::size_t>(j)];
    for (int j = 0; j < c; ++j) {
      xn->grad[static_cast<std::size_t>(j)] +=
          (on->grad[static_cast<std::size_t>(j)] - dot * on->data[static_cast<std::size_t>(j)]) / nrm;
    }
  };
  return out;
}

/// log(sum(exp(row))) per row, max-shifted.
inline Tensor logsumexp_rows(const Tensor& x) {
  if (x.ndim() != 2) throw validation_error("logsumexp_rows expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  Tensor out = detail::op({r}, {x});
  for (int i = 0; i < r; ++i) {
    const double* row = x.data().data() + static_cast<std::size_t>(i) * c;
    double mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    out.data()[static_cast<std::size_t>(i)] = mx + std::log(s);
  }
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, r, c] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < r; ++i) {
      const double* row = xn->data.data() + static_cast<std::size_t>(i) * c;
      const double lse = on->data[static_cast<std::size_t>(i)];
      const double g = on->grad[static_cast<std::size_t>(i)];
      double* dx = xn->grad.data() + static_cast<std::size_t>(i) * c;
      for (int j = 0; j < c; ++j) dx[j] += g * std::exp(row[j] - lse);
    }
  };
  return out;
}

/// out[i] = x[i, idx[i]].
inline Tensor gather_per_row(const Tensor& x, std::vector<int> idx) {
  if (x.ndim() != 2) throw validation_error("gather_per_row expects a matrix");
  const int r = x.dim(0), c = x.dim(1);
  if (static_cast<int>(idx.size()) != r) throw validation_error("gather_per_row index count mismatch");
  for (int i = 0; i < r; ++i) {
    if (idx[static_cast<std::size_t>(i)] < 0 || idx[static_cast<std::size_t>(i)] >= c) {
      throw validation_error("gather_per_row index out of range at row " + std::to_string(i));
    }
  }
  Tensor out = detail::op({r}, {x});
  for (int i = 0; i < r; ++i) {
    out.data()[static_cast<std::size_t>(i)] =
        x.data()[static_cast<std::size_t>(i) * c + idx[static_cast<std::size_t>(i)]];
  }
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, idx, c] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      xn->grad[i * c + static_cast<std::size_t>(idx[i])] += on->grad[i];
    }
  };
  return out;
}

inline Tensor sum_all(const Tensor& x) {
  Tensor out = detail::op({1}, {x});
  double s = 0.0;
  for (double v : x.data()) s += v;
  out.data()[0] = s;
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (double& g : xn->grad) g += on->grad[0];
  };
  return out;
}

inline Tensor mean_all(const Tensor& x) {
  return scale(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

/// Mean over rows of x[T x D] where mask[t] != 0; all-masked input yields the
/// zero vector and propagates no gradient.
inline Tensor masked_mean_rows(const Tensor& x, const std::vector<double>& mask) {
  if (x.ndim() != 2) throw validation_error("masked_mean_rows expects a matrix");
  const int t = x.dim(0), d = x.dim(1);
  if (static_cast<int>(mask.size()) != t) throw validation_error("masked_mean_rows mask length mismatch");
  double count = 0.0;
  for (double m : mask) count += (m != 0.0) ? 1.0 : 0.0;
  Tensor out = detail::op({d}, {x});
  if (count == 0.0) return out;
  for (int i = 0; i < t; ++i) {
    if (mask[static_cast<std::size_t>(i)] == 0.0) continue;
    for (int j = 0; j < d; ++j) {
      out.data()[static_cast<std::size_t>(j)] += x.data()[static_cast<std::size_t>(i) * d + j];
    }
  }
  for (int j = 0; j < d; ++j) out.data()[static_cast<std::size_t>(j)] /= count;
  auto xn = x.node, on = out.node;
  out.node->backward = [xn, on, mask, t, d, count] {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (int i = 0; i < t; ++i) {
      if (mask[static_cast<std::size_t>(i)] == 0.0) continue;
      for (int j = 0; j < d; ++j) {
        xn->grad[static_cast<std::size_t>(i) * d + j] += on->grad[static_cast<std::size_t>(j)] / count;
      }
    }
  };
  return out;
}

/// Weighted sum of rows: out[d] = sum_i w[i] * x[i, d]. Differentiable in
/// both the weights and the rows.
inline Tensor weighted_sum_rows(const Tensor& x, const Tensor& w) {
  if (x.ndim() != 2 || w.ndim() != 1 || w.dim(0) != x.dim(0)) {
    throw validation_error("weighted_sum_rows: weights " + shape_str(w.shape()) +
                           " vs rows of " + shape_str(x.shape()));
  }
  const int n = x.dim(0), d = x.dim(1);
  Tensor out = detail::op({d}, {x, w});
  for (int i = 0; i < n; ++i) {
    const double wi = w.data()[static_cast<std::size_t>(i)];
    for (int j = 0; j < d; ++j) {
      out.data()[static_cast<std::size_t>(j)] += wi * x.data()[static_cast<std::size_t>(i) * d + j];
    }
  }
  auto xn = x.node, wn = w.node, on = out.node;
  out.node->backward = [xn, wn, on, n, d] {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        const double wi = wn->data[static_cast<std::size_t>(i)];
        for (int j = 0; j < d; ++j) {
          xn->grad[static_cast<std::size_t>(i) * d + j] += wi * on->grad[static_cast<std::size_t>(j)];
        }
      }
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      for (int i = 0; i < n; ++i) {
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
          s += xn->data[static_cast<std::size_t>(i) * d + j] * on->grad[static_cast<std::size_t>(j)];
        }
        wn->grad[static_cast<std::size_t>(i)] += s;
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// table lookup and losses
// ---------------------------------------------------------------------------

/// Row lookup into an embedding table[V x D] for a sequence of ids.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw validation_error("embedding table must be 2-d");
  const int v = table.dim(0), d = table.dim(1);
  const int t = static_cast<int>(ids.size());
  for (int i = 0; i < t; ++i) {
    if (ids[static_cast<std::size_t>(i)] < 0 || ids[static_cast<std::size_t>(i)] >= v) {
      throw data_error("token id " + std::to_string(ids[static_cast<std::size_t>(i)]) +
                       " out of vocabulary range [0, " + std::to_string(v) + ")");
    }
  }
  Tensor out = detail::op({t, d}, {table});
  for (int i = 0; i < t; ++i) {
    std::copy_n(table.data().begin() + static_cast<std::ptrdiff_t>(ids[static_cast<std::size_t>(i)]) * d,
                d, out.data().begin() + static_cast<std::ptrdiff_t>(i) * d);
  }
  auto tn = table.node, on = out.node;
  std::vector<int> ids_copy = ids;
  out.node->backward = [tn, on, ids_copy, d] {
    if (!tn->requires_grad) return;
    tn->ensure_grad();
    for (std::size_t i = 0; i < ids_copy.size(); ++i) {
      for (int j = 0; j < d; ++j) {
        tn->grad[static_cast<std::size_t>(ids_copy[i]) * d + j] += on->grad[i * d + j];
      }
    }
  };
  return out;
}

/// Mean over the batch of -log softmax(logits)[label].
inline Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw validation_error("cross_entropy expects [batch x classes] logits");
  const int b = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != b) {
    throw validation_error("cross_entropy label count " + std::to_string(labels.size()) +
                           " does not match batch " + std::to_string(b));
  }
  for (int i = 0; i < b; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k) {
      throw data_error("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                       " out of range [0, " + std::to_string(k) + ") at record " + std::to_string(i));
    }
  }
  Tensor out = detail::op({1}, {logits});
  double total = 0.0;
  for (int i = 0; i < b; ++i) {
    const double* row = logits.data().data() + static_cast<std::size_t>(i) * k;
    double mx = row[0];
    for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    total += mx + std::log(s) - row[labels[static_cast<std::size_t>(i)]];
  }
  out.data()[0] = total / b;
  auto ln = logits.node, on = out.node;
  std::vector<int> labels_copy = labels;
  out.node->backward = [ln, on, labels_copy, b, k] {
    if (!ln->requires_grad) return;
    ln->ensure_grad();
    const double g = on->grad[0] / b;
    for (int i = 0; i < b; ++i) {
      const double* row = ln->data.data() + static_cast<std::size_t>(i) * k;
      double* drow = ln->grad.data() + static_cast<std::size_t>(i) * k;
      double mx = row[0];
      for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += std::exp(row[j] - mx);
      for (int j = 0; j < k; ++j) {
        const double p = std::exp(row[j] - mx) / s;
        drow[j] += g * (p - (j == labels_copy[static_cast<std::size_t>(i)] ? 1.0 : 0.0));
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// 2-d cross-correlation (no kernel flip) of input[C x H x W] with
/// kernels[F x C x kh x kw]. Output extents follow floor division:
///   H' = (H + 2 pad - kh) / stride + 1.
/// Implemented as im2col + GEMM; the column matrix is kept for the backward
/// col2im scatter.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
  if (input.ndim() != 3 || kernels.ndim() != 4) {
    throw validation_error("conv2d expects input [C,H,W] and kernels [F,C,kh,kw], got " +
                           shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
  }
  if (stride < 1) throw validation_error("conv2d stride must be >= 1");
  if (padding < 0) throw validation_error("conv2d padding must be >= 0");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const int f = kernels.dim(0), kc = kernels.dim(1), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kc != c) {
    throw validation_error("conv2d channel mismatch: input has " + std::to_string(c) +
                           ", kernels expect " + std::to_string(kc));
  }
  if (kh > h + 2 * padding || kw > w + 2 * padding) {
    throw validation_error("conv2d kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                           " exceeds padded input " + std::to_string(h + 2 * padding) + "x" +
                           std::to_string(w + 2 * padding));
  }
  const int ho = (h + 2 * padding - kh) / stride + 1;
  const int wo = (w + 2 * padding - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw validation_error("conv2d non-positive output extent");

  const int patch = c * kh * kw;
  const int cells = ho * wo;
  auto cols = std::make_shared<std::vector<double>>(static_cast<std::size_t>(cells) * patch, 0.0);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* dst = cols->data() + (static_cast<std::size_t>(oy) * wo + ox) * patch;
      int p = 0;
      for (int ch = 0; ch < c; ++ch) {
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride + ky - padding;
          for (int kx = 0; kx < kw; ++kx, ++p) {
            const int ix = ox * stride + kx - padding;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
              dst[p] = input.data()[(static_cast<std::size_t>(ch) * h + iy) * w + ix];
            }
          }
        }
      }
    }
  }

  Tensor out = detail::op({f, ho, wo}, {input, kernels});
  {
    ECMap colmap(cols->data(), cells, patch);
    ECMap kmap(kernels.data().data(), f, patch);
    EMat prod = colmap * kmap.transpose();  // [cells x f]
    for (int ch = 0; ch < f; ++ch) {
      for (int i = 0; i < cells; ++i) {
        out.data()[static_cast<std::size_t>(ch) * cells + i] = prod(i, ch);
      }
    }
  }

  auto in_node = input.node, k_node = kernels.node, on = out.node;
  out.node->backward = [in_node, k_node, on, cols, c, h, w, f, kh, kw, ho, wo, stride, padding] {
    const int patch2 = c * kh * kw;
    const int cells2 = ho * wo;
    EMat dout_mat(cells2, f);
    for (int ch = 0; ch < f; ++ch) {
      for (int i = 0; i < cells2; ++i) {
        dout_mat(i, ch) = on->grad[static_cast<std::size_t>(ch) * cells2 + i];
      }
    }
    if (k_node->requires_grad) {
      k_node->ensure_grad();
      ECMap colmap(cols->data(), cells2, patch2);
      EMap dk(k_node->grad.data(), f, patch2);
      dk.noalias() += dout_mat.transpose() * colmap;
    }
    if (in_node->requires_grad) {
      in_node->ensure_grad();
      ECMap kmap(k_node->data.data(), f, patch2);
      EMat dcols = dout_mat * kmap;  // [cells x patch]
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          const double* src = dcols.data() + (static_cast<std::size_t>(oy) * wo + ox) * patch2;
          int p = 0;
          for (int ch = 0; ch < c; ++ch) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = oy * stride + ky - padding;
              for (int kx = 0; kx < kw; ++kx, ++p) {
                const int ix = ox * stride + kx - padding;
                if (iy >= 0 && iy < h && ix >= 0 && ix < w) {
                  in_node->grad[(static_cast<std::size_t>(ch) * h + iy) * w + ix] += src[p];
                }
              }
            }
          }
        }
      }
    }
  };
  return out;
}

// ---------------------------------------------------------------------------
// small conveniences
// ---------------------------------------------------------------------------

/// x @ W + b for x of shape [in] or [T x in]; W is [in x out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.ndim() == 1) {
    Tensor row = reshape(x, {1, x.dim(0)});
    Tensor y = matmul(row, weight);
    y = add_rowvec(y, bias);
    return reshape(y, {weight.dim(1)});
  }
  return add_rowvec(matmul(x, weight), bias);
}

inline Tensor linear_nobias(const Tensor& x, const Tensor& weight) {
  if (x.ndim() == 1) {
    Tensor row = reshape(x, {1, x.dim(0)});
    return reshape(matmul(row, weight), {weight.dim(1)});
  }
  return matmul(x, weight);
}

}  // namespace cgmm
