#pragma once

// Reconstruction-based objectives: cross/self construction from a
// similarity matrix, Chamfer construction loss, the neighborhood mapping
// regularizer, and total-loss assembly.

#include "seornet/backbone.hpp"
#include "seornet/config.hpp"

namespace seornet {

struct LossWeights {
  double lambda_cc = 1.0, lambda_sc = 10.0;
  double l1 = 0.1, l2 = 0.1, l3 = 1.0, l4 = 0.8, l5 = 1.0;
  double alpha = 0.0;
  int k_cons = 10;
  int reg_sign = -1;

  static LossWeights from(const LossConfig& c) {
    return {c.lambda_cc, c.lambda_sc, c.l1, c.l2, c.l3, c.l4, c.l5, c.alpha, c.k, c.reg_sign};
  }
};

/// Indices of the k largest entries of each row (ties to the lower index).
template <class T>
IndexMat topk_rows(const Mat<T>& s, int k) {
  require(k >= 1 && k <= s.cols(), "top-k: k = ", k, " outside [1, ", s.cols(), "]");
  IndexMat idx(s.rows(), k);
  std::vector<int> order(s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      return s(i, a) > s(i, b) || (s(i, a) == s(i, b) && a < b);
    });
    for (int j = 0; j < k; ++j) idx(i, j) = order[j];
  }
  return idx;
}

/// For each row i of S: softmax over its k most similar columns, applied
/// to the matching rows of `y`.
template <class T>
Var<T> cross_construct(Var<T> s, Var<T> y, int k) {
  require(s.cols() == y.rows(), "cross_construct: similarity has ", s.cols(),
          " columns for a cloud of ", y.rows(), " points");
  require(k >= 1 && k <= s.cols(), "cross_construct: k = ", k, " exceeds ", s.cols(),
          " candidate points");
  const Mat<T>& sv = s.value();
  const Mat<T>& yv = y.value();
  const IndexMat idx = topk_rows(sv, k);
  Mat<T> w(sv.rows(), k);
  Mat<T> out = Mat<T>::Zero(sv.rows(), yv.cols());
  for (Eigen::Index i = 0; i < sv.rows(); ++i) {
    const T mx = sv(i, idx(i, 0));
    T z = T(0);
    for (int j = 0; j < k; ++j) z += (w(i, j) = std::exp(sv(i, idx(i, j)) - mx));
    for (int j = 0; j < k; ++j) {
      w(i, j) /= z;
      out.row(i) += w(i, j) * yv.row(idx(i, j));
    }
  }
  Mat<T> rec = out;
  return s.tape->push(std::move(out), {s, y}, [s, y, idx, w, rec](Tape<T>& t, const Mat<T>& g) {
    const bool gs = t.requires_grad(s), gy = t.requires_grad(y);
    const Mat<T>& yv = t.value(y);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const T base = g.row(i).dot(rec.row(i));
      for (Eigen::Index j = 0; j < idx.cols(); ++j) {
        const int col = idx(i, j);
        if (gs) t.grad(s)(i, col) += w(i, j) * (g.row(i).dot(yv.row(col)) - base);
        if (gy) t.grad(y).row(col) += w(i, j) * g.row(i);
      }
    }
  });
}

/// Cross construction of a cloud from its own features.
template <class T>
Var<T> self_construct(Var<T> features, Var<T> x, int k) {
  return cross_construct(cosine_similarity(features, features), x, k);
}

/// Mean squared nearest-neighbour distance a->b plus b->a.
template <class T>
Var<T> chamfer(Var<T> a, Var<T> b) {
  require(a.rows() > 0 && b.rows() > 0 && a.cols() == b.cols(), "chamfer: bad shapes");
  std::vector<int> nn_ab, nn_ba;
  std::vector<T> d_ab, d_ba;
  detail::nearest_rows(a.value(), b.value(), nn_ab, d_ab);
  detail::nearest_rows(b.value(), a.value(), nn_ba, d_ba);
  const T na = T(a.rows()), nb = T(b.rows());
  Mat<T> out(1, 1);
  out(0, 0) = std::accumulate(d_ab.begin(), d_ab.end(), T(0)) / na +
              std::accumulate(d_ba.begin(), d_ba.end(), T(0)) / nb;
  return a.tape->push(std::move(out), {a, b}, [a, b, nn_ab, nn_ba, na, nb](Tape<T>& t,
                                                                         const Mat<T>& g) {
    const Mat<T>& av = t.value(a);
    const Mat<T>& bv = t.value(b);
    const bool ga = t.requires_grad(a), gb = t.requires_grad(b);
    const T s = g(0, 0);
    for (Eigen::Index i = 0; i < av.rows(); ++i) {
      const auto diff = (av.row(i) - bv.row(nn_ab[i])) * (T(2) * s / na);
      if (ga) t.grad(a).row(i) += diff;
      if (gb) t.grad(b).row(nn_ab[i]) -= diff;
    }
    for (Eigen::Index j = 0; j < bv.rows(); ++j) {
      const auto diff = (bv.row(j) - av.row(nn_ba[j])) * (T(2) * s / nb);
      if (gb) t.grad(b).row(j) += diff;
      if (ga) t.grad(a).row(nn_ba[j]) -= diff;
    }
  });
}

/// lambda_cc (CD(Y, Y^x) + CD(X, X^y)) + lambda_sc (CD(Y, Y^y) + CD(X, X^x)).
template <class T>
Var<T> construction_loss(Var<T> y_s, Var<T> y_cross, Var<T> x_s, Var<T> x_cross, Var<T> y_self,
                         Var<T> x_self, const LossWeights& w) {
  return weighted_sum<T>({chamfer(y_s, y_cross), chamfer(x_s, x_cross), chamfer(y_s, y_self),
                          chamfer(x_s, x_self)},
                         {T(w.lambda_cc), T(w.lambda_cc), T(w.lambda_sc), T(w.lambda_sc)});
}

/// Mean squared distance from each point to its k coordinate neighbours
/// (self excluded when present); used as the default regularizer scale.
template <class T>
T mean_knn_sq_distance(const Mat<T>& x, const IndexMat& idx) {
  T sum = T(0);
  long count = 0;
  for (Eigen::Index i = 0; i < idx.rows(); ++i)
    for (Eigen::Index j = 0; j < idx.cols(); ++j) {
      if (idx(i, j) == i) continue;
      sum += (x.row(i) - x.row(idx(i, j))).squaredNorm();
      ++count;
    }
  return count > 0 ? sum / T(count) : T(1);
}

/// The k nearest other points of each row of x (self dropped).
template <class T>
IndexMat knn_excluding_self(const Mat<T>& x, int k) {
  require(k >= 1 && k < x.rows(), "neighbourhood k = ", k, " needs at least ", k + 1, " points, got ",
          x.rows());
  const IndexMat all = knn_indices(x, x, k + 1, KnnSpace::Coordinate).indices;
  IndexMat idx(x.rows(), k);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    int c = 0;
    for (Eigen::Index j = 0; j <= k && c < k; ++j)
      if (all(i, j) != i) idx(i, c++) = all(i, j);
  }
  return idx;
}

/// sum_i sum_{l in N(x_i)} exp(sign |x_i - x_l|^2 / alpha) |yhat_i - yhat_l|^2,
/// N(x_i) the k nearest other source points in coordinate space.
template <class T>
Var<T> mapping_regularizer(const Mat<T>& x, Var<T> yhat, int k, T alpha, int sign = -1) {
  require(alpha > T(0), "mapping_regularizer: alpha must be > 0, got ", alpha);
  require(sign == 1 || sign == -1, "mapping_regularizer: sign must be +1 or -1");
  require(x.rows() == yhat.rows(), "mapping_regularizer: size mismatch");
  const IndexMat idx = knn_excluding_self(x, k);
  Mat<T> wts(idx.rows(), idx.cols());
  const Mat<T>& y = yhat.value();
  Mat<T> out = Mat<T>::Zero(1, 1);
  for (Eigen::Index i = 0; i < idx.rows(); ++i)
    for (Eigen::Index j = 0; j < idx.cols(); ++j) {
      const int l = idx(i, j);
      wts(i, j) = std::exp(T(sign) * (x.row(i) - x.row(l)).squaredNorm() / alpha);
      out(0, 0) += wts(i, j) * (y.row(i) - y.row(l)).squaredNorm();
    }
  return yhat.tape->push(std::move(out), {yhat}, [yhat, idx, wts](Tape<T>& t, const Mat<T>& g) {
    const Mat<T>& y = t.value(yhat);
    auto& gy = t.grad(yhat);
    for (Eigen::Index i = 0; i < idx.rows(); ++i)
      for (Eigen::Index j = 0; j < idx.cols(); ++j) {
        const int l = idx(i, j);
        const auto d = (y.row(i) - y.row(l)) * (T(2) * wts(i, j) * g(0, 0));
        gy.row(i) += d;
        gy.row(l) -= d;
      }
  });
}

/// Individual loss terms of one training pair. Absent terms stay unset.
template <class T>
struct LossTerms {
  std::optional<Var<T>> ccs, css, angle, domain, cons, norm;
};

/// lambda1 l_ccs + lambda2 l_css + lambda3 l_angle + lambda4 l_domain + l_cons + lambda5 l_norm
/// over the terms that are present. Non-finite terms are rejected by name.
template <class T>
Var<T> total_loss(const LossTerms<T>& terms, const LossWeights& w) {
  std::vector<Var<T>> vars;
  std::vector<T> weights;
  auto take = [&](const std::optional<Var<T>>& v, double weight, const char* name) {
    if (!v) return;
    require(std::isfinite(double(v->scalar())), "non-finite loss component ", name, " = ",
            v->scalar());
    vars.push_back(*v);
    weights.push_back(T(weight));
  };
  take(terms.ccs, w.l1, "l_ccs");
  take(terms.css, w.l2, "l_css");
  take(terms.angle, w.l3, "l_angle");
  take(terms.domain, w.l4, "l_domain");
  take(terms.cons, 1.0, "l_cons");
  take(terms.norm, w.l5, "l_norm");
  require(!vars.empty(), "total_loss: no loss terms");
  return weighted_sum(vars, weights);
}

inline double total_loss(double l_ccs, double l_css, double l_angle, double l_domain,
                         double l_cons, double l_norm, const LossWeights& w) {
  const double parts[] = {l_ccs, l_css, l_angle, l_domain, l_cons, l_norm};
  const char* names[] = {"l_ccs", "l_css", "l_angle", "l_domain", "l_cons", "l_norm"};
  for (int i = 0; i < 6; ++i)
    require(!std::isnan(parts[i]), "non-finite loss component ", names[i]);
  return w.l1 * l_ccs + w.l2 * l_css + w.l3 * l_angle + w.l4 * l_domain + l_cons +
         w.l5 * l_norm;
}

}  // namespace seornet
