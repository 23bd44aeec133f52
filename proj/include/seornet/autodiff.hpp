#pragma once

// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation applied to its Vars. Nodes whose inputs
// do not require gradients store no backward closure, so a tape created
// with recording disabled is a plain forward evaluator.

#include "seornet/core.hpp"

#include <functional>
#include <vector>

namespace seornet {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Mat<T>& value() const { return tape->value(*this); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  T scalar() const { return value()(0, 0); }
};

template <class T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat<T>&)>;

  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Var<T> constant(Mat<T> v) { return push_node(std::move(v), false, {}); }

  /// Leaf whose gradient is kept on the tape (read it with grad()).
  Var<T> leaf(Mat<T> v) { return push_node(std::move(v), recording_, {}); }

  /// Leaf whose gradient is forwarded to `sink` during backward().
  Var<T> leaf(Mat<T> v, Mat<T>* sink) {
    if (!recording_ || sink == nullptr) return constant(std::move(v));
    return push_node(std::move(v), true, [sink](Tape&, const Mat<T>& g) { *sink += g; });
  }

  /// Result node of an operation over `inputs`.
  Var<T> push(Mat<T> value, std::initializer_list<Var<T>> inputs, Backward fn) {
    bool needs = false;
    if (recording_)
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push_node(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }
  Var<T> push(Mat<T> value, const std::vector<Var<T>>& inputs, Backward fn) {
    bool needs = false;
    if (recording_)
      for (const auto& in : inputs) needs = needs || nodes_[in.id].requires_grad;
    return push_node(std::move(value), needs, needs ? std::move(fn) : Backward{});
  }

  const Mat<T>& value(Var<T> v) const { return nodes_[v.id].value; }
  bool requires_grad(Var<T> v) const { return nodes_[v.id].requires_grad; }

  /// Gradient accumulator of `v`, zero-initialized on first access.
  Mat<T>& grad(Var<T> v) {
    auto& n = nodes_[v.id];
    if (n.grad.size() == 0) n.grad = Mat<T>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(Var<T> v) const { return nodes_[v.id].grad.size() != 0; }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every recorded input.
  void backward(Var<T> loss) {
    require(loss.tape == this, "backward: variable belongs to another tape");
    require(value(loss).size() == 1, "backward: loss must be a scalar");
    if (!nodes_[loss.id].requires_grad) return;
    grad(loss).setConstant(T(1));
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<T> value;
    Mat<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  Var<T> push_node(Mat<T> value, bool requires_grad, Backward fn) {
    nodes_.push_back(Node{std::move(value), Mat<T>(), requires_grad, std::move(fn)});
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool recording_;
};

// ---------------------------------------------------------------------------
// Elementwise and linear-algebra operations.

template <class T>
void check_same_shape(Var<T> a, Var<T> b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), op, ": shape mismatch ", a.rows(),
          "x", a.cols(), " vs ", b.rows(), "x", b.cols());
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions ", a.cols(), " and ", b.rows());
  Mat<T> out = a.value() * b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.requires_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "add");
  Mat<T> out = a.value() + b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) += g;
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  check_same_shape(a, b, "sub");
  Mat<T> out = a.value() - b.value();
  return a.tape->push(std::move(out), {a, b}, [a, b](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(b)) t.grad(b) -= g;
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Mat<T> out = a.value() * s;
  return a.tape->push(std::move(out), {a}, [a, s](Tape<T>& t, const Mat<T>& g) {
    t.grad(a) += g * s;
  });
}

/// Adds a 1xC row to every row of `a`.
template <class T>
Var<T> add_row(Var<T> a, Var<T> row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias width ", row.cols(),
          " vs ", a.cols());
  Mat<T> out = a.value().rowwise() + row.value().row(0);
  return a.tape->push(std::move(out), {a, row}, [a, row](Tape<T>& t, const Mat<T>& g) {
    if (t.requires_grad(a)) t.grad(a) += g;
    if (t.requires_grad(row)) t.grad(row) += g.colwise().sum();
  });
}

template <class T>
Var<T> transpose(Var<T> a) {
  Mat<T> out = a.value().transpose();
  return a.tape->push(std::move(out), {a}, [a](Tape<T>& t, const Mat<T>& g) {
    t.grad(a) += g.transpose();
  });
}

template <class T>
Var<T> leaky_relu(Var<T> a, T slope) {
  Mat<T> out = a.value().unaryExpr([slope](T x) { return x > T(0) ? x : slope * x; });
  return a.tape->push(std::move(out), {a}, [a, slope](Tape<T>& t, const Mat<T>& g) {
    const Mat<T>& x = t.value(a);
    t.grad(a) += g.binaryExpr(x, [slope](T gi, T xi) { return xi > T(0) ? gi : slope * gi; });
  });
}

template <class T>
Var<T> relu(Var<T> a) {
  return leaky_relu(a, T(0));
}

template <class T>
Var<T> sigmoid(Var<T> a) {
  Mat<T> out = a.value().unaryExpr([](T x) { return T(1) / (T(1) + std::exp(-x)); });
  Mat<T> keep = out;
  return a.tape->push(std::move(out), {a}, [a, keep](Tape<T>& t, const Mat<T>& g) {
    t.grad(a).array() += g.array() * keep.array() * (T(1) - keep.array());
  });
}

/// Identity forward; multiplies the incoming gradient by -weight.
template <class T>
Var<T> grad_reverse(Var<T> a, T weight) {
  Mat<T> out = a.value();
  return a.tape->push(std::move(out), {a}, [a, weight](Tape<T>& t, const Mat<T>& g) {
    t.grad(a) -= g * weight;
  });
}

/// Blocks gradient flow; the result is a constant copy.
template <class T>
Var<T> detach(Var<T> a) {
  return a.tape->constant(a.value());
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  require(!parts.empty(), "concat_cols: no inputs");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<T> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return parts.front().tape->push(std::move(out), parts, [parts](Tape<T>& t, const Mat<T>& g) {
    Eigen::Index c0 = 0;
    for (const auto& p : parts) {
      if (t.requires_grad(p)) t.grad(p) += g.middleCols(c0, p.cols());
      c0 += p.cols();
    }
  });
}

/// Column-wise maximum over rows (global max pooling); ties pick the lower row.
template <class T>
Var<T> max_rows(Var<T> a) {
  const Mat<T>& x = a.value();
  require(x.rows() > 0, "max_rows: empty input");
  Mat<T> out(1, x.cols());
  std::vector<Eigen::Index> arg(x.cols());
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    Eigen::Index best = 0;
    for (Eigen::Index r = 1; r < x.rows(); ++r)
      if (x(r, c) > x(best, c)) best = r;
    arg[c] = best;
    out(0, c) = x(best, c);
  }
  return a.tape->push(std::move(out), {a}, [a, arg](Tape<T>& t, const Mat<T>& g) {
    auto& ga = t.grad(a);
    for (Eigen::Index c = 0; c < g.cols(); ++c) ga(arg[c], c) += g(0, c);
  });
}

template <class T>
Var<T> mean_rows(Var<T> a) {
  const auto n = a.rows();
  require(n > 0, "mean_rows: empty input");
  Mat<T> out = a.value().colwise().mean();
  return a.tape->push(std::move(out), {a}, [a, n](Tape<T>& t, const Mat<T>& g) {
    t.grad(a).rowwise() += g.row(0) / T(n);
  });
}

template <class T>
Var<T> mean_all(Var<T> a) {
  const auto n = a.value().size();
  Mat<T> out(1, 1);
  out(0, 0) = a.value().mean();
  return a.tape->push(std::move(out), {a}, [a, n](Tape<T>& t, const Mat<T>& g) {
    t.grad(a).array() += g(0, 0) / T(n);
  });
}

/// out[i, c] = max_j m[idx(i, j), c]. Gradient is routed to the arg-max row.
template <class T>
Var<T> gather_max(Var<T> m, const IndexMat& idx) {
  const Mat<T>& x = m.value();
  const auto n = idx.rows();
  const auto k = idx.cols();
  require(k >= 1, "gather_max: empty neighborhood");
  Mat<T> out(n, x.cols());
  IndexMat arg(n, x.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int first = idx(i, 0);
    require(first >= 0 && first < x.rows(), "gather_max: index out of range");
    out.row(i) = x.row(first);
    arg.row(i).setConstant(first);
    for (Eigen::Index j = 1; j < k; ++j) {
      const int r = idx(i, j);
      require(r >= 0 && r < x.rows(), "gather_max: index out of range");
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        if (x(r, c) > out(i, c)) {
          out(i, c) = x(r, c);
          arg(i, c) = r;
        }
      }
    }
  }
  return m.tape->push(std::move(out), {m}, [m, arg](Tape<T>& t, const Mat<T>& g) {
    auto& gm = t.grad(m);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
      for (Eigen::Index c = 0; c < g.cols(); ++c) gm(arg(i, c), c) += g(i, c);
  });
}

/// Per-row normalization to zero mean / unit variance, then affine gain and shift.
template <class T>
Var<T> layer_norm(Var<T> a, Var<T> gain, Var<T> shift, T eps = T(1e-5)) {
  const Mat<T>& x = a.value();
  const auto c = x.cols();
  require(gain.cols() == c && shift.cols() == c, "layer_norm: affine width mismatch");
  Mat<T> xhat(x.rows(), c);
  RowVec<T> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mu = x.row(r).mean();
    const T var = (x.row(r).array() - mu).square().mean();
    inv_std(r) = T(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.row(r).array() - mu) * inv_std(r);
  }
  Mat<T> out = (xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
               shift.value().row(0).array();
  return a.tape->push(
      std::move(out), {a, gain, shift},
      [a, gain, shift, xhat, inv_std](Tape<T>& t, const Mat<T>& g) {
        if (t.requires_grad(gain)) t.grad(gain) += (g.cwiseProduct(xhat)).colwise().sum();
        if (t.requires_grad(shift)) t.grad(shift) += g.colwise().sum();
        if (!t.requires_grad(a)) return;
        const auto cn = static_cast<T>(xhat.cols());
        Mat<T> gx = g.array().rowwise() * t.value(gain).row(0).array();
        auto& ga = t.grad(a);
        for (Eigen::Index r = 0; r < gx.rows(); ++r) {
          const T m1 = gx.row(r).sum() / cn;
          const T m2 = gx.row(r).dot(xhat.row(r)) / cn;
          ga.row(r).array() +=
              inv_std(r) * (gx.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
      });
}

template <class T>
Var<T> softmax_rows(Var<T> a) {
  Mat<T> out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const T mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp();
    out.row(r) /= out.row(r).sum();
  }
  Mat<T> keep = out;
  return a.tape->push(std::move(out), {a}, [a, keep](Tape<T>& t, const Mat<T>& g) {
    auto& ga = t.grad(a);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const T dot = g.row(r).dot(keep.row(r));
      ga.row(r).array() += keep.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

/// Weighted sum of 1x1 variables.
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  require(!terms.empty() && terms.size() == weights.size(), "weighted_sum: size mismatch");
  Mat<T> out = Mat<T>::Zero(1, 1);
  for (std::size_t i = 0; i < terms.size(); ++i) {
    require(terms[i].value().size() == 1, "weighted_sum: terms must be scalars");
    out(0, 0) += weights[i] * terms[i].scalar();
  }
  return terms.front().tape->push(std::move(out), terms,
                                  [terms, weights](Tape<T>& t, const Mat<T>& g) {
                                    for (std::size_t i = 0; i < terms.size(); ++i)
                                      if (t.requires_grad(terms[i]))
                                        t.grad(terms[i]).array() += weights[i] * g(0, 0);
                                  });
}

template <class T>
Var<T> scalar_constant(Tape<T>& tape, T v) {
  Mat<T> m(1, 1);
  m(0, 0) = v;
  return tape.constant(std::move(m));
}

}  // namespace seornet
