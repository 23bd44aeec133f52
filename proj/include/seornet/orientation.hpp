#pragma once

// Orientation estimation: a shared three-block EdgeConv encoder, the
// query-based feature interaction between source and target, an EdgeConv
// refinement, the rotation-bin classifier, and the PointNet-style domain
// discriminator. Also hosts the angle/bin conversions, the two losses
// supervising the module, and bin-center source alignment.

#include "seornet/backbone.hpp"

namespace seornet {

struct AngleLabel {
  int bin = 0;
  double angle = 0.0;
};

struct AngleDistribution {
  std::vector<double> probs;

  int bins() const { return static_cast<int>(probs.size()); }
  /// Most probable bin; ties resolve to the lower bin.
  int argmax() const {
    require(!probs.empty(), "AngleDistribution: empty");
    int best = 0;
    for (int i = 1; i < bins(); ++i)
      if (probs[i] > probs[best]) best = i;
    return best;
  }
  void validate() const {
    require(!probs.empty(), "AngleDistribution: empty");
    double sum = 0.0;
    for (double p : probs) {
      require(p >= 0.0 && std::isfinite(p), "AngleDistribution: invalid probability ", p);
      sum += p;
    }
    require(std::abs(sum - 1.0) <= 1e-6, "AngleDistribution: probabilities sum to ", sum);
  }
  static AngleDistribution one_hot(int bin, int bins) {
    require(bin >= 0 && bin < bins, "one_hot: bin ", bin, " outside [0, ", bins, ")");
    AngleDistribution d;
    d.probs.assign(bins, 0.0);
    d.probs[bin] = 1.0;
    return d;
  }
  template <class T>
  static AngleDistribution from_row(const Mat<T>& row) {
    AngleDistribution d;
    for (Eigen::Index i = 0; i < row.cols(); ++i) d.probs.push_back(double(row(0, i)));
    return d;
  }
};

inline AngleLabel angle_to_bin(double angle, int bins) {
  require(bins >= 1, "angle_to_bin: bins must be >= 1");
  require(angle >= 0.0 && angle < kTwoPi, "angle_to_bin: angle ", angle,
          " outside [0, 2pi)");
  int bin = static_cast<int>(std::floor(angle * bins / kTwoPi));
  bin = std::min(bin, bins - 1);
  return {bin, angle};
}

inline double bin_to_angle(int bin, int bins) {
  require(bins >= 1 && bin >= 0 && bin < bins, "bin_to_angle: bin ", bin, " outside [0, ",
          bins, ")");
  return (bin + 0.5) * kTwoPi / bins;
}

inline constexpr double kLogClamp = 1e-12;

/// Cross entropy of a predicted distribution (1 x M) against a bin label.
template <class T>
Var<T> angle_loss(Var<T> probs, int label) {
  require(probs.rows() == 1 && label >= 0 && label < probs.cols(), "angle_loss: label ", label,
          " outside distribution of ", probs.cols(), " bins");
  const T p = probs.value()(0, label);
  const T clamped = std::max(p, T(kLogClamp));
  Mat<T> out(1, 1);
  out(0, 0) = -std::log(clamped);
  return probs.tape->push(std::move(out), {probs},
                          [probs, label, p, clamped](Tape<T>& t, const Mat<T>& g) {
                            if (p >= T(kLogClamp)) t.grad(probs)(0, label) -= g(0, 0) / clamped;
                          });
}

inline double angle_loss(const AngleDistribution& pred, const AngleLabel& label) {
  pred.validate();
  require(label.bin >= 0 && label.bin < pred.bins(), "angle_loss: label outside distribution");
  return -std::log(std::max(pred.probs[label.bin], kLogClamp));
}

/// Two-class focal loss on the discriminator's "real pair" probability d:
/// -(1-d)^g log d for real pairs, -d^g log(1-d) for rotation-augmented ones.
template <class T>
Var<T> domain_loss(Var<T> d, bool is_real, T gamma) {
  require(gamma > T(1), "domain_loss: gamma must be > 1, got ", gamma);
  require(d.value().size() == 1, "domain_loss: expected a scalar probability");
  const T lo = T(kLogClamp), hi = T(1) - T(kLogClamp);
  const T raw = d.scalar();
  const T p = std::clamp(raw, lo, hi);
  // Loss as a function of q, the probability assigned to the true class.
  const T q = is_real ? p : T(1) - p;
  Mat<T> out(1, 1);
  out(0, 0) = -std::pow(T(1) - q, gamma) * std::log(q);
  const bool inside = raw > lo && raw < hi;
  return d.tape->push(std::move(out), {d}, [d, q, gamma, is_real, inside](Tape<T>& t,
                                                                         const Mat<T>& g) {
    if (!inside) return;
    const T dq = gamma * std::pow(T(1) - q, gamma - T(1)) * std::log(q) -
                 std::pow(T(1) - q, gamma) / q;
    t.grad(d)(0, 0) += g(0, 0) * (is_real ? dq : -dq);
  });
}

inline double domain_loss(double d, bool is_real, double gamma) {
  Tape<double> tape(false);
  Mat<double> m(1, 1);
  m(0, 0) = d;
  return domain_loss(tape.constant(m), is_real, gamma).scalar();
}

/// Undoes the predicted relative rotation: rotates the source by minus
/// the center angle of the most probable bin.
inline PointCloud align_source(const PointCloud& source, const AngleDistribution& pred) {
  pred.validate();
  return rotate_z(source, ZRotation(-bin_to_angle(pred.argmax(), pred.bins())));
}

template <class T>
Mat<T> align_source(const Mat<T>& source, int bin, int bins) {
  const double a = -bin_to_angle(bin, bins);
  const T c = T(std::cos(a)), s = T(std::sin(a));
  Mat<T> out = source;
  out.col(0) = c * source.col(0) - s * source.col(1);
  out.col(1) = s * source.col(0) + c * source.col(1);
  return out;
}

template <class T>
struct OemOutput {
  Var<T> p_in_s, p_in_t;
  Var<T> p_out;
  Var<T> p_hat;
  Var<T> probs;
};

struct OrientationModule {
  OemConfig config;
  std::array<EdgeConv, 3> encoder;
  EdgeConv fim_edge;
  Linear fim_skip;
  EdgeConv refine;
  std::vector<Linear> head;
  std::vector<LayerNorm> head_norms;
  Linear head_out;
  std::vector<Linear> disc_point;
  std::vector<Linear> disc_global;
  Linear disc_out;

  template <class T>
  static OrientationModule create(ParamStore<T>& store, const OemConfig& cfg, Rng& rng,
                                  const std::string& prefix = "oem") {
    require(cfg.encoder_widths.size() == 3, "OEM encoder needs exactly three EdgeConv blocks");
    OrientationModule m;
    m.config = cfg;
    int in = 3;
    for (int i = 0; i < 3; ++i) {
      m.encoder[i] = EdgeConv::create(store, prefix + ".enc" + std::to_string(i), in,
                                      cfg.encoder_widths[i], rng);
      in = cfg.encoder_widths[i];
    }
    const int c1 = in;
    m.fim_edge = EdgeConv::create(store, prefix + ".fim.edge", c1 + 3, cfg.fim_width, rng);
    m.fim_skip = Linear::create(store, prefix + ".fim.skip", c1, cfg.fim_width, rng);
    m.refine = EdgeConv::create(store, prefix + ".refine", cfg.fim_width, cfg.fim_width, rng);
    int width = 4 * cfg.fim_width;  // max and mean pooling of [p_out, refined]
    for (std::size_t i = 0; i < cfg.head_widths.size(); ++i) {
      const auto name = prefix + ".head" + std::to_string(i);
      m.head.push_back(Linear::create(store, name, width, cfg.head_widths[i], rng));
      if (cfg.head_norm == NormKind::Layer)
        m.head_norms.push_back(LayerNorm::create(store, name + ".norm", cfg.head_widths[i]));
      width = cfg.head_widths[i];
    }
    m.head_out = Linear::create(store, prefix + ".head_out", width, cfg.bins, rng);
    width = 2 * cfg.fim_width;
    for (std::size_t i = 0; i < cfg.disc_point_widths.size(); ++i) {
      m.disc_point.push_back(Linear::create(store, prefix + ".disc.point" + std::to_string(i),
                                            width, cfg.disc_point_widths[i], rng));
      width = cfg.disc_point_widths[i];
    }
    for (std::size_t i = 0; i < cfg.disc_global_widths.size(); ++i) {
      m.disc_global.push_back(Linear::create(store, prefix + ".disc.global" + std::to_string(i),
                                             width, cfg.disc_global_widths[i], rng));
      width = cfg.disc_global_widths[i];
    }
    m.disc_out = Linear::create(store, prefix + ".disc.out", width, 1, rng);
    return m;
  }

  int encoding_width() const { return encoder.back().out; }
  int hat_width() const { return 2 * config.fim_width; }

  /// Shared-weight encodings of both clouds; also returns each cloud's
  /// coordinate graph for reuse by the refinement block.
  template <class T>
  std::pair<Var<T>, Var<T>> encode(ParamBinding<T>& p, const Mat<T>& source,
                                   const Mat<T>& target, KnnGraph* source_graph = nullptr) const {
    auto run = [&](const Mat<T>& cloud, KnnGraph* keep) {
      KnnGraph graph = knn_indices(cloud, cloud, config.k, KnnSpace::Coordinate);
      Var<T> h = p.tape().constant(cloud);
      for (const auto& block : encoder) h = block(p, h, graph, T(config.slope));
      if (keep) *keep = std::move(graph);
      return h;
    };
    Var<T> s = run(source, source_graph);
    Var<T> t = run(target, nullptr);
    return {s, t};
  }

  /// Each source point queries its k feature-space nearest target points;
  /// edges carry feature and position differences, are max-pooled, passed
  /// through ReLU and added to a linear skip of the source features.
  template <class T>
  Var<T> interact(ParamBinding<T>& p, Var<T> p_s, Var<T> p_t, const Mat<T>& coords_s,
                  const Mat<T>& coords_t, int k, KnnGraph* feature_graph = nullptr) const {
    require(p_s.cols() == p_t.cols() && p_s.rows() == coords_s.rows() &&
                p_t.rows() == coords_t.rows(),
            "feature_interaction: shape mismatch");
    require(k >= 1 && k <= p_t.rows(), "feature_interaction: k = ", k, " outside [1, ",
            p_t.rows(), "]");
    KnnGraph graph = knn_indices(p_s.value(), p_t.value(), k, KnnSpace::Feature);
    Tape<T>& tape = p.tape();
    Var<T> xs = concat_cols<T>({p_s, tape.constant(coords_s)});
    Var<T> xt = concat_cols<T>({p_t, tape.constant(coords_t)});
    Var<T> agg = fim_edge(p, xs, xt, graph.indices, Activation::Relu, T(0));
    if (feature_graph) *feature_graph = std::move(graph);
    return add(agg, fim_skip(p, p_s));
  }

  /// EdgeConv refinement of p_out over the source graph, concatenated with p_out.
  template <class T>
  Var<T> refine_and_concat(ParamBinding<T>& p, Var<T> p_out, const KnnGraph& source_graph) const {
    Var<T> refined = refine(p, p_out, source_graph, T(config.slope));
    return concat_cols<T>({p_out, refined});
  }

  /// Max- and mean-pooled global feature through the MLP head; softmax over bins.
  template <class T>
  Var<T> classify(ParamBinding<T>& p, Var<T> p_hat) const {
    Var<T> h = concat_cols<T>({max_rows(p_hat), mean_rows(p_hat)});
    for (std::size_t i = 0; i < head.size(); ++i) {
      h = head[i](p, h);
      if (!head_norms.empty()) h = head_norms[i](p, h);
      h = relu(h);
    }
    return softmax_rows(head_out(p, h));
  }

  /// Probability that p_hat comes from a real (cross-shape) pair.
  template <class T>
  Var<T> discriminate(ParamBinding<T>& p, Var<T> p_hat) const {
    Var<T> h = p_hat;
    for (const auto& l : disc_point) h = leaky_relu(l(p, h), T(config.slope));
    h = max_rows(h);
    for (const auto& l : disc_global) h = leaky_relu(l(p, h), T(config.slope));
    return sigmoid(disc_out(p, h));
  }

  template <class T>
  OemOutput<T> forward(ParamBinding<T>& p, const Mat<T>& source, const Mat<T>& target,
                       bool use_fim = true) const {
    OemOutput<T> o;
    KnnGraph graph;
    std::tie(o.p_in_s, o.p_in_t) = encode(p, source, target, &graph);
    if (use_fim) {
      o.p_out = interact(p, o.p_in_s, o.p_in_t, source, target, config.fim_k);
    } else {
      require(encoding_width() == config.fim_width,
              "disabling the feature interaction needs oem.fim_width == encoder output width");
      o.p_out = o.p_in_s;
    }
    o.p_hat = refine_and_concat(p, o.p_out, graph);
    o.probs = classify(p, o.p_hat);
    return o;
  }
};

}  // namespace seornet
