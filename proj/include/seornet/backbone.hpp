#pragma once

// Static-graph DGCNN: four EdgeConv blocks over one coordinate-space kNN
// graph, a per-point projection, and the cosine similarity between two
// embeddings.

#include "seornet/config.hpp"
#include "seornet/geometry.hpp"
#include "seornet/params.hpp"

#include <array>

namespace seornet {

enum class Activation { Leaky, Relu };

/// Single-layer edge MLP over (center, neighbor - center), max-pooled over
/// the neighborhood. Because the activation is monotone, pooling the
/// pre-activation is equivalent to pooling activated edge features:
///   out_i = act(x_i Wc - x_i Wd + b + max_j x_j Wd).
struct EdgeConv {
  ParamId w_center = 0, w_diff = 0, bias = 0;
  int in = 0, out = 0;

  template <class T>
  static EdgeConv create(ParamStore<T>& store, const std::string& name, int in, int out,
                         Rng& rng) {
    EdgeConv e;
    e.in = in;
    e.out = out;
    e.w_center = store.add_weight(name + ".w_center", in, out, 2 * in, rng);
    e.w_diff = store.add_weight(name + ".w_diff", in, out, 2 * in, rng);
    e.bias = store.add_constant(name + ".bias", 1, out, T(0));
    return e;
  }

  /// Centers are rows of `x`; neighbors idx(i, :) index rows of `y`.
  template <class T>
  Var<T> operator()(ParamBinding<T>& p, Var<T> x, Var<T> y, const IndexMat& idx,
                    Activation act, T slope) const {
    require(x.cols() == in && y.cols() == in, "EdgeConv: expected ", in,
            " input channels, got ", x.cols(), " and ", y.cols());
    require(idx.rows() == x.rows(), "EdgeConv: graph has ", idx.rows(), " rows for ", x.rows(),
            " points");
    const Var<T> wd = p(w_diff);
    const Var<T> center = matmul(x, p(w_center));
    const Var<T> qx = matmul(x, wd);
    const Var<T> qy = x.id == y.id ? qx : matmul(y, wd);
    Var<T> pre = add_row(add(sub(center, qx), gather_max(qy, idx)), p(bias));
    return act == Activation::Relu ? relu(pre) : leaky_relu(pre, slope);
  }

  template <class T>
  Var<T> operator()(ParamBinding<T>& p, Var<T> x, const KnnGraph& graph, T slope) const {
    return (*this)(p, x, x, graph.indices, Activation::Leaky, slope);
  }
};

/// Applies one EdgeConv block to a feature matrix over a given graph.
template <class T>
Var<T> edgeconv(ParamBinding<T>& p, const EdgeConv& layer, Var<T> features,
                const KnnGraph& graph, T slope = T(0.2)) {
  for (Eigen::Index i = 0; i < graph.indices.size(); ++i)
    require(graph.indices.data()[i] >= 0 && graph.indices.data()[i] < features.rows(),
            "edgeconv: graph index out of range");
  return layer(p, features, graph, slope);
}

struct Backbone {
  BackboneConfig config;
  std::array<EdgeConv, 4> blocks;
  Linear projection;

  template <class T>
  static Backbone create(ParamStore<T>& store, const BackboneConfig& cfg, Rng& rng,
                         const std::string& prefix = "backbone") {
    require(cfg.widths.size() == 4, "backbone needs exactly four EdgeConv blocks");
    Backbone b;
    b.config = cfg;
    int in = 3, concat = 0;
    for (int i = 0; i < 4; ++i) {
      b.blocks[i] = EdgeConv::create(store, prefix + ".ec" + std::to_string(i), in,
                                     cfg.widths[i], rng);
      in = cfg.widths[i];
      concat += in;
    }
    b.projection = Linear::create(store, prefix + ".proj", cfg.concat_blocks ? concat : in,
                                  cfg.embedding, rng);
    return b;
  }

  /// Embeds an N x 3 cloud. The coordinate-space graph is built once and
  /// shared by all four blocks; `graphs_used`, when given, receives the
  /// adjacency handed to each block.
  template <class T>
  Var<T> forward(ParamBinding<T>& p, const Mat<T>& cloud,
                 std::vector<IndexMat>* graphs_used = nullptr) const {
    require(cloud.cols() == 3, "backbone: expected N x 3 coordinates");
    const KnnGraph graph = knn_indices(cloud, cloud, config.k_graph, KnnSpace::Coordinate);
    Var<T> h = p.tape().constant(cloud);
    std::vector<Var<T>> outs;
    for (const auto& block : blocks) {
      if (graphs_used) graphs_used->push_back(graph.indices);
      h = block(p, h, graph, T(config.slope));
      outs.push_back(h);
    }
    return projection(p, config.concat_blocks ? concat_cols(outs) : h);
  }
};

// ---------------------------------------------------------------------------
// Cosine similarity.

inline constexpr double kCosineEps = 1e-8;

/// s_ij = <fx_i, fy_j> / (max(|fx_i|, eps) max(|fy_j|, eps)). `clamped`
/// counts rows whose norm fell below eps.
template <class T>
Var<T> cosine_similarity(Var<T> fx, Var<T> fy, std::size_t* clamped = nullptr) {
  require(fx.cols() == fy.cols(), "cosine_similarity: widths differ (", fx.cols(), " vs ",
          fy.cols(), ")");
  const T eps = T(kCosineEps);
  auto normalize = [&](const Mat<T>& f, RowVec<T>& norms) {
    norms.resize(f.rows());
    Mat<T> u(f.rows(), f.cols());
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
      const T n = f.row(i).norm();
      if (n < eps && clamped) ++*clamped;
      norms(i) = std::max(n, eps);
      u.row(i) = f.row(i) / norms(i);
    }
    return u;
  };
  RowVec<T> nx, ny;
  Mat<T> ux = normalize(fx.value(), nx);
  Mat<T> uy = normalize(fy.value(), ny);
  Mat<T> s = ux * uy.transpose();
  return fx.tape->push(std::move(s), {fx, fy}, [fx, fy, ux, uy, nx, ny, eps](Tape<T>& t,
                                                                           const Mat<T>& g) {
    // d s_ij / d fx_i = (uy_j - s_ij ux_i) / |fx_i| when |fx_i| > eps.
    auto back = [&](Var<T> f, const Mat<T>& gu, const Mat<T>& u, const RowVec<T>& norms) {
      auto& gf = t.grad(f);
      const Mat<T>& raw = t.value(f);
      for (Eigen::Index i = 0; i < gu.rows(); ++i) {
        if (raw.row(i).norm() < eps) {
          gf.row(i) += gu.row(i) / norms(i);
        } else {
          gf.row(i) += (gu.row(i) - gu.row(i).dot(u.row(i)) * u.row(i)) / norms(i);
        }
      }
    };
    if (t.requires_grad(fx)) back(fx, g * uy, ux, nx);
    if (t.requires_grad(fy)) back(fy, g.transpose() * ux, uy, ny);
  });
}

template <class T>
Mat<T> cosine_similarity_matrix(const Mat<T>& fx, const Mat<T>& fy,
                                std::size_t* clamped = nullptr) {
  Tape<T> tape(false);
  return cosine_similarity(tape.constant(fx), tape.constant(fy), clamped).value();
}

}  // namespace seornet
