#pragma once

// Mean-teacher machinery: the stochastic transform producing the student's
// inputs, EMA teacher updates, and the similarity consistency losses.

#include "seornet/model.hpp"

namespace seornet {

struct StochasticTransform {
  double sigma = 0.1;
  double theta_x = 0.0;
  std::uint64_t source_noise_seed = 0;
  std::uint64_t target_noise_seed = 0;

  /// Samples theta_x uniformly on [0, 2pi) and the two noise seeds.
  static StochasticTransform sample(double sigma, std::uint64_t seed) {
    require(sigma >= 0, "stochastic transform: sigma must be >= 0");
    Rng rng(seed);
    StochasticTransform t;
    t.sigma = sigma;
    t.theta_x = rng.angle();
    t.source_noise_seed = derive_seed(seed, 1);
    t.target_noise_seed = derive_seed(seed, 2);
    return t;
  }
  static StochasticTransform identity() { return StochasticTransform{0.0, 0.0, 0, 0}; }
};

struct AugmentedPair {
  PointCloud x_s, y_s;
  double theta_x = 0.0;
};

/// y_s = y + noise; x_s = R(theta_x) x + noise. Point order is untouched.
inline AugmentedPair apply_stochastic_transform(const PointCloud& x, const PointCloud& y,
                                                const StochasticTransform& tr) {
  require(tr.sigma >= 0, "stochastic transform: sigma must be >= 0");
  require(tr.theta_x >= 0 && tr.theta_x < kTwoPi, "stochastic transform: theta_x outside [0, 2pi)");
  AugmentedPair out;
  out.theta_x = tr.theta_x;
  out.y_s = add_gaussian_noise(y, tr.sigma, tr.target_noise_seed);
  out.x_s = add_gaussian_noise(rotate_z(x, ZRotation(tr.theta_x)), tr.sigma, tr.source_noise_seed);
  return out;
}

inline AugmentedPair apply_stochastic_transform(const PointCloud& x, const PointCloud& y,
                                                double sigma, std::uint64_t seed) {
  return apply_stochastic_transform(x, y, StochasticTransform::sample(sigma, seed));
}

template <class T>
struct TeacherStudentState {
  ParamStore<T> student;
  ParamStore<T> teacher;
  double ema_decay = 0.999;
};

/// teacher <- decay * teacher + (1 - decay) * student, per element.
template <class T>
void ema_update(ParamStore<T>& teacher, const ParamStore<T>& student, double decay) {
  require(decay >= 0.0 && decay <= 1.0, "ema_update: decay ", decay, " outside [0, 1]");
  require(teacher.same_layout(student), "ema_update: teacher/student layouts differ");
  const T d = T(decay), s = T(1.0 - decay);
  for (ParamId i = 0; i < teacher.size(); ++i) {
    if (decay == 0.0) {
      teacher.value(i) = student.value(i);
    } else if (decay != 1.0) {
      teacher.value(i) = d * teacher.value(i) + s * student.value(i);
    }
  }
}

template <class T>
void ema_update(TeacherStudentState<T>& state) {
  ema_update(state.teacher, state.student, state.ema_decay);
}

/// Mean over entries of 0.5 d^2 / beta when |d| < beta, else |d| - 0.5 beta.
template <class T>
Var<T> smooth_l1(Var<T> a, Var<T> b, T beta = T(1)) {
  check_same_shape(a, b, "smooth_l1");
  require(beta > T(0), "smooth_l1: beta must be > 0");
  const Mat<T> d = a.value() - b.value();
  const T count = T(d.size());
  Mat<T> out(1, 1);
  out(0, 0) = d.unaryExpr([beta](T x) {
                 const T ax = std::abs(x);
                 return ax < beta ? T(0.5) * x * x / beta : ax - T(0.5) * beta;
               }).sum() /
              count;
  return a.tape->push(std::move(out), {a, b}, [a, b, d, beta, count](Tape<T>& t,
                                                                     const Mat<T>& g) {
    const Mat<T> gd = d.unaryExpr([beta](T x) {
                        if (std::abs(x) < beta) return x / beta;
                        return x > T(0) ? T(1) : T(-1);
                      }) *
                      (g(0, 0) / count);
    if (t.requires_grad(a)) t.grad(a) += gd;
    if (t.requires_grad(b)) t.grad(b) -= gd;
  });
}

template <class T>
T smooth_l1(const Mat<T>& a, const Mat<T>& b, T beta = T(1)) {
  Tape<T> tape(false);
  return smooth_l1(tape.constant(a), tape.constant(b), beta).scalar();
}

/// Teacher (constant) and student similarity matrices for one pair.
template <class T>
struct SimilarityBundle {
  Var<T> teacher_xy, teacher_xx;
  Var<T> student_xy, student_xx;
};

/// (l_ccs, l_css). Teacher matrices are detached before comparison.
template <class T>
std::pair<Var<T>, Var<T>> consistency_losses(const SimilarityBundle<T>& b, T beta = T(1)) {
  return {smooth_l1(detach(b.teacher_xy), b.student_xy, beta),
          smooth_l1(detach(b.teacher_xx), b.student_xx, beta)};
}

}  // namespace seornet
