#pragma once

// Inference, correspondence metrics, test-set augmentation, reports and
// accuracy-curve plots.

#include "seornet/training.hpp"

#include <iomanip>

namespace seornet {

struct CorrespondenceResult {
  /// mapping[i] = predicted target index of source point i.
  IndexVec mapping;
  /// Distance from each predicted target to the true one; filled by score().
  std::vector<double> distances;
  /// Target diameter used by acc(eps).
  double diameter = 0;
  /// Orientation bin used to pre-align the source, -1 when unused.
  int orientation_bin = -1;
};

/// Row-wise argmax of a similarity matrix, ties to the lowest column.
template <class Derived>
CorrespondenceResult infer_correspondence(const Eigen::MatrixBase<Derived>& s) {
  CorrespondenceResult r;
  r.mapping.resize(s.rows());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < s.cols(); ++j)
      if (s(i, j) > s(i, best)) best = j;
    r.mapping[i] = int(best);
  }
  return r;
}

inline void check_scoring_inputs(const CorrespondenceResult& r, const PointCloud& y,
                                 const GroundTruthMap& gt) {
  require(r.mapping.size() == gt.size(), "mapping has ", r.mapping.size(),
          " entries, ground truth ", gt.size());
  gt.validate(y.size());
  for (int j : r.mapping)
    require(j >= 0 && j < y.n(), "mapped index ", j, " outside target of ", y.size());
}

/// Fills distances and diameter.
inline CorrespondenceResult& score(CorrespondenceResult& r, const PointCloud& y,
                                   const GroundTruthMap& gt) {
  check_scoring_inputs(r, y, gt);
  r.distances.resize(r.mapping.size());
  for (std::size_t i = 0; i < r.mapping.size(); ++i)
    r.distances[i] = point_distance(y, r.mapping[i], gt.target_index[i]);
  r.diameter = max_diameter(y);
  return r;
}

/// Mean distance between predicted and true targets, in cloud units (cm).
inline double correspondence_error(const CorrespondenceResult& r, const PointCloud& y,
                                   const GroundTruthMap& gt) {
  check_scoring_inputs(r, y, gt);
  double sum = 0;
  for (std::size_t i = 0; i < r.mapping.size(); ++i)
    sum += point_distance(y, r.mapping[i], gt.target_index[i]);
  return r.mapping.empty() ? 0.0 : sum / double(r.mapping.size());
}

/// Fraction of points whose error is strictly below eps times the target diameter.
inline double correspondence_accuracy(const CorrespondenceResult& r, const PointCloud& y,
                                      const GroundTruthMap& gt, double eps) {
  require(eps >= 0.0 && eps <= 1.0, "tolerance ", eps, " outside [0, 1]");
  check_scoring_inputs(r, y, gt);
  const double bound = eps * max_diameter(y);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < r.mapping.size(); ++i)
    hits += point_distance(y, r.mapping[i], gt.target_index[i]) < bound;
  return r.mapping.empty() ? 0.0 : double(hits) / double(r.mapping.size());
}

inline double accuracy_of_scored(const CorrespondenceResult& r, double eps) {
  require(r.distances.size() == r.mapping.size(), "result has not been scored");
  std::size_t hits = 0;
  for (double d : r.distances) hits += d < eps * r.diameter;
  return r.distances.empty() ? 0.0 : double(hits) / double(r.distances.size());
}

inline const std::vector<double>& default_tolerances() {
  static const std::vector<double> grid{0.0, 0.01, 0.02, 0.05, 0.10, 0.20};
  return grid;
}

struct MetricsReport {
  double err_cm = 0;
  std::vector<double> tolerances;
  std::vector<double> acc;
  int n_pairs = 0;

  double acc_at(double eps) const {
    for (std::size_t i = 0; i < tolerances.size(); ++i)
      if (std::abs(tolerances[i] - eps) < 1e-12) return acc[i];
    fail("tolerance ", eps, " not in report");
  }

  json to_json() const {
    json a = json::object();
    for (std::size_t i = 0; i < tolerances.size(); ++i) {
      std::ostringstream key;
      key << tolerances[i];
      a[key.str()] = acc[i];
    }
    return json{{"aggregate", true},
                {"err_cm", err_cm},
                {"n_pairs", n_pairs},
                {"tolerances", tolerances},
                {"acc", acc},
                {"acc_by_tolerance", a}};
  }

  static MetricsReport from_json(const json& j) {
    MetricsReport r;
    try {
      r.err_cm = j.at("err_cm").get<double>();
      r.n_pairs = j.at("n_pairs").get<int>();
      r.tolerances = j.at("tolerances").get<std::vector<double>>();
      r.acc = j.at("acc").get<std::vector<double>>();
    } catch (const json::exception& e) {
      fail("malformed metrics record: ", e.what());
    }
    require(r.tolerances.size() == r.acc.size(), "metrics record: tolerance/acc length mismatch");
    return r;
  }

  /// Tab-separated "tolerance  acc" table.
  std::string table() const {
    std::ostringstream os;
    os << "tolerance\tacc\n";
    for (std::size_t i = 0; i < tolerances.size(); ++i)
      os << tolerances[i] << '\t' << acc[i] << '\n';
    return os.str();
  }
};

/// Averages err and acc(eps) over scored results.
inline MetricsReport accuracy_curve(const std::vector<CorrespondenceResult>& results,
                                    const std::vector<double>& tolerances = default_tolerances()) {
  require(std::is_sorted(tolerances.begin(), tolerances.end()),
          "accuracy_curve: tolerances must be sorted ascending");
  MetricsReport rep;
  rep.tolerances = tolerances;
  rep.acc.assign(tolerances.size(), 0.0);
  rep.n_pairs = int(results.size());
  for (const auto& r : results) {
    require(r.distances.size() == r.mapping.size(), "accuracy_curve: result has not been scored");
    double sum = 0;
    for (double d : r.distances) sum += d;
    rep.err_cm += r.distances.empty() ? 0.0 : sum / double(r.distances.size());
    for (std::size_t t = 0; t < tolerances.size(); ++t)
      rep.acc[t] += accuracy_of_scored(r, tolerances[t]);
  }
  if (!results.empty()) {
    rep.err_cm /= double(results.size());
    for (double& a : rep.acc) a /= double(results.size());
  }
  return rep;
}

/// Uniformly random mapping; the chance baseline.
inline CorrespondenceResult random_mapping(int n_source, int n_target, std::uint64_t seed) {
  require(n_target >= 1, "random_mapping: empty target");
  Rng rng(seed);
  CorrespondenceResult r;
  for (int i = 0; i < n_source; ++i) r.mapping.push_back(rng.index(n_target));
  return r;
}

/// Robustness protocol: Gaussian noise on both clouds and/or a random
/// z-rotation of the source. Point order, and so the ground truth, is kept.
inline std::vector<ShapePair> augment_test_set(const std::vector<ShapePair>& pairs, bool use_noise,
                                               bool use_rotation, double sigma = 0.1,
                                               std::uint64_t seed = 17) {
  require(sigma >= 0, "augment_test_set: sigma must be >= 0");
  std::vector<ShapePair> out = pairs;
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto& p = out[i];
    const std::uint64_t s = derive_seed(seed, 0xA6, i);
    if (use_rotation) {
      const double a = Rng(s).angle();
      p.source = rotate_z(p.source, ZRotation(a));
      if (p.theta) p.theta = ZRotation(*p.theta + a).angle();
    }
    if (use_noise) {
      p.source = add_gaussian_noise(p.source, sigma, derive_seed(s, 1));
      p.target = add_gaussian_noise(p.target, sigma, derive_seed(s, 2));
    }
  }
  return out;
}

enum class WeightSet { Teacher, Student };

/// Runs a trained model on one pair: optional orientation pre-alignment,
/// embeddings, cosine similarity, row-wise argmax.
template <class T>
CorrespondenceResult predict(const Trainer<T>& trainer, const PointCloud& source,
                             const PointCloud& target, WeightSet weights = WeightSet::Teacher) {
  const Model& model = trainer.model();
  const TrainConfig& cfg = trainer.config();
  ParamStore<T>& store = const_cast<Trainer<T>&>(trainer).teacher();
  ParamStore<T>& params =
      weights == WeightSet::Teacher ? store : const_cast<Trainer<T>&>(trainer).student();
  Tape<T> tape(false);
  ParamBinding<T> p(tape, params, false);
  Mat<T> x = source.as<T>();
  const Mat<T> y = target.as<T>();
  int bin = -1;
  if (cfg.ablation.oem) {
    const auto o = model.oem.forward(p, x, y, cfg.ablation.fim);
    bin = AngleDistribution::from_row(o.probs.value()).argmax();
    x = align_source(x, bin, cfg.model.oem.bins);
  }
  const Mat<T> fx = model.backbone.forward(p, x).value();
  const Mat<T> fy = model.backbone.forward(p, y).value();
  CorrespondenceResult r = infer_correspondence(cosine_similarity_matrix(fx, fy));
  r.orientation_bin = bin;
  return r;
}

/// Predicted orientation bin for a pair.
template <class T>
int predict_orientation(const Trainer<T>& trainer, const PointCloud& source,
                        const PointCloud& target, WeightSet weights = WeightSet::Teacher) {
  auto& tr = const_cast<Trainer<T>&>(trainer);
  Tape<T> tape(false);
  ParamBinding<T> p(tape, weights == WeightSet::Teacher ? tr.teacher() : tr.student(), false);
  const auto o = trainer.model().oem.forward(p, source.as<T>(), target.as<T>(),
                                             trainer.config().ablation.fim);
  return AngleDistribution::from_row(o.probs.value()).argmax();
}

/// Scores every pair with ground truth; writes one JSON line per pair and
/// a final aggregate line to `log` when given.
template <class T>
MetricsReport evaluate(const Trainer<T>& trainer, const std::vector<ShapePair>& pairs,
                       std::ostream* log = nullptr,
                       const std::vector<double>& tolerances = default_tolerances(),
                       WeightSet weights = WeightSet::Teacher) {
  std::vector<CorrespondenceResult> results;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pr = pairs[i];
    require(pr.gt.has_value(), "evaluation pair ", i, " has no ground truth");
    CorrespondenceResult r = predict(trainer, pr.source, pr.target, weights);
    score(r, pr.target, *pr.gt);
    if (log) {
      json rec{{"pair", i}, {"err_cm", correspondence_error(r, pr.target, *pr.gt)}};
      std::vector<double> acc;
      for (double t : tolerances) acc.push_back(accuracy_of_scored(r, t));
      rec["acc"] = acc;
      if (r.orientation_bin >= 0) rec["orientation_bin"] = r.orientation_bin;
      *log << rec.dump() << '\n';
    }
    results.push_back(std::move(r));
  }
  MetricsReport rep = accuracy_curve(results, tolerances);
  if (log) *log << rep.to_json().dump() << '\n';
  return rep;
}

/// Reads the aggregate record from a report file (the last line carrying
/// "aggregate": true).
inline MetricsReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open report ", path.string());
  std::string line;
  std::optional<MetricsReport> found;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(path.string(), ":", lineno, ": ", e.what());
    }
    if (j.value("aggregate", false)) found = MetricsReport::from_json(j);
  }
  require(found.has_value(), path.string(), ": no aggregate record");
  return *found;
}

/// Static SVG line chart of acc against tolerance.
inline std::string accuracy_svg(const MetricsReport& rep, const std::string& title = "") {
  require(!rep.tolerances.empty(), "accuracy_svg: empty report");
  const double w = 480, h = 360, left = 60, right = 20, top = 40, bottom = 50;
  const double tmax = std::max(rep.tolerances.back(), 1e-9);
  auto px = [&](double t) { return left + (w - left - right) * t / tmax; };
  auto py = [&](double a) { return h - bottom - (h - top - bottom) * a; };
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << px(tmax) << "\" y2=\""
     << py(0) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << py(0) << "\" x2=\"" << left << "\" y2=\"" << py(1)
     << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double a = i / 4.0;
    os << "<text x=\"" << left - 8 << "\" y=\"" << py(a) + 4 << "\" text-anchor=\"end\">" << a
       << "</text>\n";
  }
  for (double t : rep.tolerances)
    os << "<text x=\"" << px(t) << "\" y=\"" << py(0) + 16 << "\" text-anchor=\"middle\">" << t
       << "</text>\n";
  os << "<text x=\"" << (left + w - right) / 2 << "\" y=\"" << h - 12
     << "\" text-anchor=\"middle\">error tolerance</text>\n";
  os << "<text x=\"16\" y=\"" << (top + h - bottom) / 2 << "\" transform=\"rotate(-90 16 "
     << (top + h - bottom) / 2 << ")\" text-anchor=\"middle\">accuracy</text>\n";
  if (!title.empty())
    os << "<text x=\"" << w / 2 << "\" y=\"22\" text-anchor=\"middle\">" << title << "</text>\n";
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < rep.tolerances.size(); ++i)
    os << px(rep.tolerances[i]) << ',' << py(rep.acc[i]) << ' ';
  os << "\"/>\n";
  for (std::size_t i = 0; i < rep.tolerances.size(); ++i)
    os << "<circle cx=\"" << px(rep.tolerances[i]) << "\" cy=\"" << py(rep.acc[i])
       << "\" r=\"3\" fill=\"#1f77b4\"/>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace seornet
