#pragma once

// Mean-teacher training: per-pair forward pass and losses, optimizers,
// EMA schedule, metrics and checkpoints.
//
// All randomness in a step derives from (seed, step), so a run resumed
// from a checkpoint replays exactly the steps an uninterrupted run would.

#include "seornet/data_synth.hpp"
#include "seornet/objectives.hpp"
#include "seornet/self_ensembling.hpp"

#include <bit>
#include <cstring>
#include <functional>

namespace seornet {

template <class T>
class Optimizer {
 public:
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<Mat<T>> m, v;

  Optimizer() = default;
  Optimizer(OptimizerKind k, double learning_rate, const ParamStore<T>& store)
      : kind(k), lr(learning_rate) {
    for (const auto& p : store) {
      m.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
      v.push_back(Mat<T>::Zero(p.value.rows(), p.value.cols()));
    }
  }

  void step(ParamStore<T>& store) {
    require(m.size() == store.size(), "optimizer state does not match the parameters");
    ++t;
    const double c1 = 1.0 - std::pow(beta1, double(t));
    const double c2 = 1.0 - std::pow(beta2, double(t));
    for (ParamId i = 0; i < store.size(); ++i) {
      auto& w = store.value(i);
      const auto& g = store.grad(i);
      if (kind == OptimizerKind::Sgd) {
        w -= T(lr) * g;
        continue;
      }
      m[i] = T(beta1) * m[i] + T(1 - beta1) * g;
      v[i] = T(beta2) * v[i] + T(1 - beta2) * g.cwiseProduct(g);
      const T a = T(lr / c1), s = T(1.0 / c2);
      w.array() -= a * m[i].array() / ((v[i].array() * s).sqrt() + T(eps));
    }
  }
};

/// Decay used after `step` completed steps; ramps linearly from the start
/// value over the first fraction of training when enabled.
inline double ema_decay_at(const SelfEnsembleConfig& c, long step, long total_steps) {
  if (!c.ema_ramp || c.ema_ramp_fraction <= 0) return c.ema_decay;
  const double ramp = c.ema_ramp_fraction * double(total_steps);
  if (ramp <= 0 || double(step) >= ramp) return c.ema_decay;
  return c.ema_decay_start + (c.ema_decay - c.ema_decay_start) * double(step) / ramp;
}

/// Loss values of one pair (absent terms are NaN-free zeros with `has_*` false).
struct PairLosses {
  std::optional<double> ccs, css, angle, domain, cons, norm;
  double total = 0;
  /// Orientation classifier hit on the supervised rotated pair.
  std::optional<bool> angle_correct;
  int predicted_bin = -1, label_bin = -1;
};

struct StepMetrics {
  long step = 0;
  double ccs = 0, css = 0, angle = 0, domain = 0, cons = 0, norm = 0, total = 0;
  double angle_acc = 0;
  double ema_decay = 0;
  double seconds = 0;

  json to_json() const {
    return json{{"step", step},     {"l_ccs", ccs},   {"l_css", css},         {"l_angle", angle},
                {"l_domain", domain}, {"l_cons", cons}, {"l_norm", norm},       {"total", total},
                {"angle_acc", angle_acc}, {"ema_decay", ema_decay}, {"seconds", seconds}};
  }
};

/// Resamples every pair of a dataset to `points` points (no-op when 0).
inline std::vector<ShapePair> prepare_dataset(const std::vector<ShapePair>& data, int points,
                                              std::uint64_t seed) {
  if (points <= 0) return data;
  std::vector<ShapePair> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& p = data[i];
    const std::uint64_t s = derive_seed(seed, 0xD5, i);
    ShapePair q;
    q.theta = p.theta;
    if (p.gt) {
      auto d = downsample_pair(p.source, p.target, *p.gt, points, s);
      q.source = std::move(d.source);
      q.target = std::move(d.target);
      q.gt = std::move(d.gt);
    } else {
      q.source = downsample(p.source, points, derive_seed(s, 1)).cloud;
      q.target = downsample(p.target, points, derive_seed(s, 2)).cloud;
    }
    out.push_back(std::move(q));
  }
  return out;
}

template <class T>
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    model_ = Model::create(state_.student, cfg_.model, cfg_.seed);
    state_.teacher = state_.student;
    state_.ema_decay = cfg_.se.ema_decay;
    opt_ = Optimizer<T>(cfg_.optimizer, cfg_.learning_rate, state_.student);
  }

  const TrainConfig& config() const { return cfg_; }
  const Model& model() const { return model_; }
  ParamStore<T>& student() { return state_.student; }
  ParamStore<T>& teacher() { return state_.teacher; }
  const ParamStore<T>& student() const { return state_.student; }
  const ParamStore<T>& teacher() const { return state_.teacher; }
  const Optimizer<T>& optimizer() const { return opt_; }
  long step() const { return step_; }
  LossWeights weights() const { return LossWeights::from(cfg_.loss); }

  /// Seed of everything random about batch slot `slot` at step `step`.
  std::uint64_t pair_seed(long step, int slot) const {
    return derive_seed(cfg_.seed, 0x5EB + static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(slot));
  }

  std::vector<int> batch_indices(std::size_t dataset_size, long step) const {
    require(dataset_size > 0, "training needs at least one pair");
    Rng rng(derive_seed(cfg_.seed, 0xBA7C, static_cast<std::uint64_t>(step)));
    std::vector<int> out;
    for (int b = 0; b < cfg_.batch_size; ++b) out.push_back(rng.index(int(dataset_size)));
    return out;
  }

  /// Forward pass and losses for one pair. With `grad_scale` > 0 the
  /// student gradients of grad_scale * total are accumulated into the store.
  PairLosses pair_losses(const PointCloud& x_cloud, const PointCloud& y_cloud, std::uint64_t seed,
                         double grad_scale = 0.0) {
    const auto& ab = cfg_.ablation;
    const auto& oc = cfg_.model.oem;
    const LossWeights w = weights();
    const Mat<T> x = x_cloud.as<T>();
    const Mat<T> y = y_cloud.as<T>();

    const StochasticTransform tr = StochasticTransform::sample(cfg_.se.sigma, seed);
    const AugmentedPair aug = apply_stochastic_transform(x_cloud, y_cloud, tr);
    const Mat<T> x_rot = aug.x_s.template as<T>();
    const Mat<T> x_s = ab.transform ? x_rot : x;
    const Mat<T> y_s = ab.transform ? aug.y_s.template as<T>() : y;
    const AngleLabel label = angle_to_bin(tr.theta_x, oc.bins);

    Tape<T> tape(grad_scale > 0);
    ParamBinding<T> student(tape, state_.student, true);
    LossTerms<T> terms;
    PairLosses out;
    out.label_bin = label.bin;

    if (cfg_.oem_only) {
      const auto sup = model_.oem.forward(student, x_rot, x, ab.fim);
      terms.angle = angle_loss(sup.probs, label.bin);
      record_angle(out, sup.probs, label.bin);
      return finish(tape, terms, w, out, grad_scale);
    }

    Mat<T> x_tilde_s = x_s, x_tilde = x;
    if (ab.oem) {
      const auto sup = model_.oem.forward(student, x_rot, x, ab.fim);
      terms.angle = angle_loss(sup.probs, label.bin);
      record_angle(out, sup.probs, label.bin);
      const auto real = model_.oem.forward(student, x_s, y_s, ab.fim);
      x_tilde_s = align_source(x_s, AngleDistribution::from_row(real.probs.value()).argmax(),
                               oc.bins);
      if (ab.dam) {
        const T gamma = T(oc.gamma), grl = T(oc.grl_weight);
        Var<T> d_real = model_.oem.discriminate(student, grad_reverse(real.p_hat, grl));
        Var<T> d_aug = model_.oem.discriminate(student, grad_reverse(sup.p_hat, grl));
        terms.domain = weighted_sum<T>(
            {domain_loss(d_real, true, gamma), domain_loss(d_aug, false, gamma)},
            {T(0.5), T(0.5)});
      }
      Tape<T> ttape(false);
      ParamBinding<T> teacher(ttape, state_.teacher, false);
      const auto tout = model_.oem.forward(teacher, x, y, ab.fim);
      x_tilde = align_source(x, AngleDistribution::from_row(tout.probs.value()).argmax(), oc.bins);
    }

    Var<T> fx = model_.backbone.forward(student, x_tilde_s);
    Var<T> fy = model_.backbone.forward(student, y_s);
    Var<T> s_xy = cosine_similarity(fx, fy);
    Var<T> s_xx = cosine_similarity(fx, fx);
    Var<T> s_yy = cosine_similarity(fy, fy);

    if (ab.ccs || ab.css) {
      Tape<T> ttape(false);
      ParamBinding<T> teacher(ttape, state_.teacher, false);
      const Mat<T> tx = model_.backbone.forward(teacher, x_tilde).value();
      const Mat<T> ty = model_.backbone.forward(teacher, y).value();
      const T beta = T(cfg_.se.beta);
      if (ab.ccs)
        terms.ccs = smooth_l1(tape.constant(cosine_similarity_matrix(tx, ty)), s_xy, beta);
      if (ab.css)
        terms.css = smooth_l1(tape.constant(cosine_similarity_matrix(tx, tx)), s_xx, beta);
    }

    const int k = cfg_.loss.k;
    Var<T> xs_var = tape.constant(x_tilde_s);
    Var<T> ys_var = tape.constant(y_s);
    Var<T> y_cross = cross_construct(s_xy, ys_var, k);
    Var<T> x_cross = cross_construct(transpose(s_xy), xs_var, k);
    Var<T> y_self = cross_construct(s_yy, ys_var, k);
    Var<T> x_self = cross_construct(s_xx, xs_var, k);
    terms.cons = construction_loss(ys_var, y_cross, xs_var, x_cross, y_self, x_self, w);

    T alpha = T(w.alpha);
    if (!(alpha > T(0))) {
      alpha = mean_knn_sq_distance(x_tilde_s, knn_excluding_self(x_tilde_s, k));
      if (!(alpha > T(0))) alpha = T(1);
    }
    terms.norm = mapping_regularizer(x_tilde_s, y_cross, k, alpha, w.reg_sign);
    return finish(tape, terms, w, out, grad_scale);
  }

  /// One optimization step on the given pairs (one batch).
  StepMetrics train_step(const std::vector<const ShapePair*>& batch) {
    require(!batch.empty(), "train_step: empty batch");
    const auto t0 = std::chrono::steady_clock::now();
    state_.student.zero_grad();
    StepMetrics m;
    m.step = step_;
    int angle_hits = 0, angle_seen = 0;
    const double scale = 1.0 / double(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const PairLosses l = pair_losses(batch[b]->source, batch[b]->target,
                                       pair_seed(step_, int(b)), scale);
      m.ccs += scale * l.ccs.value_or(0);
      m.css += scale * l.css.value_or(0);
      m.angle += scale * l.angle.value_or(0);
      m.domain += scale * l.domain.value_or(0);
      m.cons += scale * l.cons.value_or(0);
      m.norm += scale * l.norm.value_or(0);
      m.total += scale * l.total;
      if (l.angle_correct) {
        ++angle_seen;
        angle_hits += *l.angle_correct;
      }
    }
    for (ParamId i = 0; i < state_.student.size(); ++i)
      require(state_.student.grad(i).allFinite(), "non-finite gradient in parameter ",
              state_.student[i].name, " at step ", step_);
    opt_.step(state_.student);
    state_.ema_decay = ema_decay_at(cfg_.se, step_, cfg_.steps);
    ema_update(state_);
    m.ema_decay = state_.ema_decay;
    m.angle_acc = angle_seen ? double(angle_hits) / angle_seen : 0.0;
    ++step_;
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return m;
  }

  /// Step on a batch drawn deterministically from `data`.
  StepMetrics train_step(const std::vector<ShapePair>& data) {
    std::vector<const ShapePair*> batch;
    for (int i : batch_indices(data.size(), step_)) batch.push_back(&data[i]);
    return train_step(batch);
  }

  /// Runs until `until_step` (default: cfg.steps), reporting each step.
  void fit(const std::vector<ShapePair>& data, long until_step = -1,
           const std::function<void(const StepMetrics&)>& on_step = {}) {
    if (until_step < 0) until_step = cfg_.steps;
    while (step_ < until_step) {
      const StepMetrics m = train_step(data);
      if (on_step) on_step(m);
    }
  }

  // -------------------------------------------------------------------------
  // Checkpoints: "SEOR1" magic, format version, scalar width, step, config
  // JSON, then per tensor name/shape/student/teacher/Adam moments, and an
  // FNV-1a checksum of everything before it.

  static constexpr std::uint32_t kCheckpointVersion = 1;

  std::string serialize() const {
    std::string buf("SEOR1", 5);
    put<std::uint32_t>(buf, kCheckpointVersion);
    put<std::uint8_t>(buf, sizeof(T));
    put<std::int64_t>(buf, step_);
    put<std::int64_t>(buf, opt_.t);
    put<double>(buf, state_.ema_decay);
    put_string(buf, to_json(cfg_).dump());
    put<std::uint32_t>(buf, std::uint32_t(state_.student.size()));
    for (ParamId i = 0; i < state_.student.size(); ++i) {
      const auto& p = state_.student[i];
      put_string(buf, p.name);
      put<std::uint32_t>(buf, std::uint32_t(p.value.rows()));
      put<std::uint32_t>(buf, std::uint32_t(p.value.cols()));
      put_mat(buf, p.value);
      put_mat(buf, state_.teacher.value(i));
      put_mat(buf, opt_.m[i]);
      put_mat(buf, opt_.v[i]);
    }
    put<std::uint64_t>(buf, fnv1a(buf));
    return buf;
  }

  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const std::string buf = serialize();
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write checkpoint ", path.string());
    out.write(buf.data(), std::streamsize(buf.size()));
    require(out.good(), "write failed for checkpoint ", path.string());
  }

  static Trainer deserialize(const std::string& buf, const std::string& origin = "checkpoint") {
    Reader r{buf, 0, origin};
    require(buf.size() >= 5 + 8 && buf.compare(0, 5, "SEOR1") == 0, origin,
            ": not a checkpoint (bad magic)");
    r.pos = 5;
    const auto version = r.template get<std::uint32_t>();
    require(version == kCheckpointVersion, origin, ": unsupported checkpoint version ", version,
            " (expected ", kCheckpointVersion, ")");
    std::uint64_t stored = 0;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    require(stored == fnv1a(std::string_view(buf).substr(0, buf.size() - 8)), origin,
            ": checksum mismatch (file truncated or corrupted)");
    const auto width = r.template get<std::uint8_t>();
    require(width == sizeof(T), origin, ": stored with ", int(width),
            "-byte scalars, loading as ", sizeof(T));
    const long step = long(r.template get<std::int64_t>());
    const long opt_t = long(r.template get<std::int64_t>());
    const double decay = r.template get<double>();
    TrainConfig cfg;
    try {
      cfg = config_from_json(json::parse(r.get_string()));
    } catch (const json::exception& e) {
      fail(origin, ": bad embedded config: ", e.what());
    }
    Trainer tr(cfg);
    const auto count = r.template get<std::uint32_t>();
    require(count == tr.state_.student.size(), origin, ": ", count,
            " parameter tensors, model expects ", tr.state_.student.size());
    for (ParamId i = 0; i < count; ++i) {
      const std::string name = r.get_string();
      const auto rows = r.template get<std::uint32_t>();
      const auto cols = r.template get<std::uint32_t>();
      auto& p = tr.state_.student[i];
      require(name == p.name && rows == p.value.rows() && cols == p.value.cols(), origin,
              ": tensor ", i, " is ", name, " ", rows, "x", cols, ", expected ", p.name, " ",
              p.value.rows(), "x", p.value.cols());
      r.get_mat(p.value);
      r.get_mat(tr.state_.teacher.value(i));
      r.get_mat(tr.opt_.m[i]);
      r.get_mat(tr.opt_.v[i]);
    }
    require(r.pos + 8 == buf.size(), origin, ": trailing bytes");
    tr.step_ = step;
    tr.opt_.t = opt_t;
    tr.state_.ema_decay = decay;
    return tr;
  }

  static Trainer load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open checkpoint ", path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize(buf, path.string());
  }

 private:
  void record_angle(PairLosses& out, Var<T> probs, int label) {
    out.predicted_bin = AngleDistribution::from_row(probs.value()).argmax();
    out.angle_correct = out.predicted_bin == label;
  }

  PairLosses finish(Tape<T>& tape, const LossTerms<T>& terms, const LossWeights& w,
                    PairLosses& out, double grad_scale) {
    auto val = [](const std::optional<Var<T>>& v) -> std::optional<double> {
      if (!v) return std::nullopt;
      return double(v->scalar());
    };
    out.ccs = val(terms.ccs);
    out.css = val(terms.css);
    out.angle = val(terms.angle);
    out.domain = val(terms.domain);
    out.cons = val(terms.cons);
    out.norm = val(terms.norm);
    Var<T> total = total_loss(terms, w);
    out.total = double(total.scalar());
    if (grad_scale > 0) tape.backward(scale(total, T(grad_scale)));
    return out;
  }

  template <class V>
  static void put(std::string& buf, V v) {
    char bytes[sizeof(V)];
    std::memcpy(bytes, &v, sizeof(V));
    buf.append(bytes, sizeof(V));
  }
  static void put_string(std::string& buf, const std::string& s) {
    put<std::uint64_t>(buf, s.size());
    buf += s;
  }
  static void put_mat(std::string& buf, const Mat<T>& m) {
    buf.append(reinterpret_cast<const char*>(m.data()), sizeof(T) * std::size_t(m.size()));
  }
  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
    return h;
  }

  struct Reader {
    const std::string& buf;
    std::size_t pos;
    std::string origin;

    void need(std::size_t n) const {
      require(pos + n + 8 <= buf.size(), origin, ": truncated checkpoint");
    }
    template <class V>
    V get() {
      need(sizeof(V));
      V v;
      std::memcpy(&v, buf.data() + pos, sizeof(V));
      pos += sizeof(V);
      return v;
    }
    std::string get_string() {
      const auto n = get<std::uint64_t>();
      need(n);
      std::string s = buf.substr(pos, n);
      pos += n;
      return s;
    }
    void get_mat(Mat<T>& m) {
      const std::size_t n = sizeof(T) * std::size_t(m.size());
      need(n);
      std::memcpy(m.data(), buf.data() + pos, n);
      pos += n;
    }
  };

  TrainConfig cfg_;
  Model model_;
  TeacherStudentState<T> state_;
  Optimizer<T> opt_;
  long step_ = 0;
};

}  // namespace seornet
