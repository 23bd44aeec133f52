#pragma once

// Geometric primitives shared by every stage of the pipeline: z-axis
// rotations, Gaussian jitter, brute-force kNN graphs, Chamfer distance,
// random downsampling and the plain-text cloud / ground-truth formats.

#include "seornet/core.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace seornet {

using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

/// Ordered set of 3D points. Index i keeps its identity through every
/// augmentation, which is what makes ground-truth maps meaningful.
class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(Points points) : points_(std::move(points)) {
    require(points_.rows() >= 1, "PointCloud: needs at least one point");
    require(points_.allFinite(), "PointCloud: non-finite coordinate");
  }

  std::size_t size() const { return static_cast<std::size_t>(points_.rows()); }
  int n() const { return static_cast<int>(points_.rows()); }
  const Points& points() const { return points_; }
  Eigen::RowVector3d point(int i) const { return points_.row(i); }

  template <class T>
  Mat<T> as() const {
    return points_.template cast<T>();
  }

  friend bool operator==(const PointCloud& a, const PointCloud& b) {
    return a.points_.rows() == b.points_.rows() && a.points_ == b.points_;
  }

 private:
  Points points_;
};

/// Rotation about the vertical z axis, angle normalized to [0, 2pi).
class ZRotation {
 public:
  explicit ZRotation(double angle = 0.0) {
    angle_ = std::fmod(angle, kTwoPi);
    if (angle_ < 0) angle_ += kTwoPi;
    if (angle_ >= kTwoPi) angle_ = 0.0;
  }
  double angle() const { return angle_; }

  Eigen::Matrix3d matrix() const {
    const double c = std::cos(angle_), s = std::sin(angle_);
    Eigen::Matrix3d r;
    r << c, -s, 0, s, c, 0, 0, 0, 1;
    return r;
  }

 private:
  double angle_ = 0.0;
};

/// Maps each source index to the index of its true partner in the target.
struct GroundTruthMap {
  IndexVec target_index;

  std::size_t size() const { return target_index.size(); }
  void validate(std::size_t target_size) const {
    for (std::size_t i = 0; i < target_index.size(); ++i)
      require(target_index[i] >= 0 && static_cast<std::size_t>(target_index[i]) < target_size,
              "ground truth entry ", i, " = ", target_index[i], " outside target of size ",
              target_size);
  }
  static GroundTruthMap identity(int n) {
    GroundTruthMap g;
    g.target_index.resize(n);
    std::iota(g.target_index.begin(), g.target_index.end(), 0);
    return g;
  }
  bool is_bijection(std::size_t target_size) const {
    if (target_index.size() != target_size) return false;
    std::vector<char> seen(target_size, 0);
    for (int t : target_index) {
      if (t < 0 || static_cast<std::size_t>(t) >= target_size || seen[t]) return false;
      seen[t] = 1;
    }
    return true;
  }
  GroundTruthMap inverse() const {
    GroundTruthMap inv;
    inv.target_index.assign(target_index.size(), -1);
    for (std::size_t i = 0; i < target_index.size(); ++i)
      inv.target_index[target_index[i]] = static_cast<int>(i);
    return inv;
  }
  friend bool operator==(const GroundTruthMap&, const GroundTruthMap&) = default;
};

enum class KnnSpace { Coordinate, Feature };

/// Row i lists k reference indices ordered by nondecreasing distance.
struct KnnGraph {
  IndexMat indices;
  int k = 0;
  KnnSpace space = KnnSpace::Coordinate;

  int rows() const { return static_cast<int>(indices.rows()); }
  friend bool operator==(const KnnGraph& a, const KnnGraph& b) {
    return a.k == b.k && a.space == b.space && a.indices.rows() == b.indices.rows() &&
           a.indices == b.indices;
  }
};

inline PointCloud rotate_z(const PointCloud& cloud, const ZRotation& rot) {
  if (rot.angle() == 0.0) return cloud;
  const Eigen::Matrix3d r = rot.matrix();
  Points out = cloud.points() * r.transpose();
  out.col(2) = cloud.points().col(2);
  return PointCloud(std::move(out));
}

inline PointCloud add_gaussian_noise(const PointCloud& cloud, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0 && std::isfinite(sigma), "add_gaussian_noise: sigma must be >= 0, got ",
          sigma);
  if (sigma == 0.0) return cloud;
  Rng rng(seed);
  Points out = cloud.points();
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (int c = 0; c < 3; ++c) out(i, c) += rng.normal(0.0, sigma);
  return PointCloud(std::move(out));
}

/// Brute-force k nearest reference rows for every query row (squared
/// Euclidean distance, ties to the lower index).
template <class DerivedQ, class DerivedR>
KnnGraph knn_indices(const Eigen::MatrixBase<DerivedQ>& query,
                     const Eigen::MatrixBase<DerivedR>& reference, int k,
                     KnnSpace space = KnnSpace::Coordinate) {
  const auto nr = reference.rows();
  require(k >= 1, "knn_indices: k must be >= 1, got ", k);
  require(k <= nr, "knn_indices: k = ", k, " exceeds reference size ", nr);
  require(query.cols() == reference.cols(), "knn_indices: dimension mismatch ", query.cols(),
          " vs ", reference.cols());
  using Scalar = typename DerivedR::Scalar;
  KnnGraph graph;
  graph.k = k;
  graph.space = space;
  graph.indices.resize(query.rows(), k);
  std::vector<std::pair<Scalar, int>> dist(nr);
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    for (Eigen::Index j = 0; j < nr; ++j)
      dist[j] = {(query.row(i) - reference.row(j)).squaredNorm(), static_cast<int>(j)};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int j = 0; j < k; ++j) graph.indices(i, j) = dist[j].second;
  }
  return graph;
}

inline KnnGraph knn_indices(const PointCloud& query, const PointCloud& reference, int k) {
  return knn_indices(query.points(), reference.points(), k, KnnSpace::Coordinate);
}

namespace detail {

/// Nearest reference row (squared distance) for each query row.
template <class T>
void nearest_rows(const Mat<T>& query, const Mat<T>& reference, std::vector<int>& arg,
                  std::vector<T>& dist) {
  arg.assign(query.rows(), 0);
  dist.assign(query.rows(), std::numeric_limits<T>::infinity());
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    for (Eigen::Index j = 0; j < reference.rows(); ++j) {
      T d = T(0);
      for (Eigen::Index c = 0; c < query.cols(); ++c) {
        const T diff = query(i, c) - reference(j, c);
        d += diff * diff;
      }
      if (d < dist[i]) {
        dist[i] = d;
        arg[i] = static_cast<int>(j);
      }
    }
  }
}

}  // namespace detail

/// Mean squared nearest-neighbour distance a->b plus b->a.
inline double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  std::vector<int> arg;
  std::vector<double> d_ab, d_ba;
  const MatXd pa = a.points(), pb = b.points();
  detail::nearest_rows(pa, pb, arg, d_ab);
  detail::nearest_rows(pb, pa, arg, d_ba);
  const double ab = std::accumulate(d_ab.begin(), d_ab.end(), 0.0) / double(d_ab.size());
  const double ba = std::accumulate(d_ba.begin(), d_ba.end(), 0.0) / double(d_ba.size());
  return ab + ba;
}

/// Euclidean distance between two points, summed x, y, z in that order.
inline double point_distance(const PointCloud& cloud, int i, int j) {
  const auto& p = cloud.points();
  const double dx = p(i, 0) - p(j, 0), dy = p(i, 1) - p(j, 1), dz = p(i, 2) - p(j, 2);
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline double max_diameter(const PointCloud& cloud) {
  double best = 0.0;
  for (int i = 0; i < cloud.n(); ++i)
    for (int j = i + 1; j < cloud.n(); ++j) best = std::max(best, point_distance(cloud, i, j));
  return best;
}

inline PointCloud select_rows(const PointCloud& cloud, const IndexVec& rows) {
  Points out(rows.size(), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = cloud.points().row(rows[i]);
  return PointCloud(std::move(out));
}

/// Uniform subset without replacement, returned in random order.
inline IndexVec sample_indices(int population, int n, std::uint64_t seed) {
  require(n >= 1, "downsample: n must be >= 1, got ", n);
  require(n <= population, "downsample: n = ", n, " exceeds cloud size ", population);
  IndexVec all(population);
  std::iota(all.begin(), all.end(), 0);
  Rng rng(seed);
  // Partial Fisher-Yates: the first n slots are the sample.
  for (int i = 0; i < n; ++i) {
    const int j = i + rng.index(population - i);
    std::swap(all[i], all[j]);
  }
  all.resize(n);
  return all;
}

struct Downsampled {
  PointCloud cloud;
  IndexVec kept;  // kept[i] = row of the input that became row i
};

inline Downsampled downsample(const PointCloud& cloud, int n, std::uint64_t seed) {
  IndexVec kept = sample_indices(cloud.n(), n, seed);
  return {select_rows(cloud, kept), std::move(kept)};
}

struct DownsampledPair {
  PointCloud source;
  PointCloud target;
  GroundTruthMap gt;
};

/// Downsamples a source/target pair to n points each and remaps the
/// ground truth. When gt is a bijection the target keeps exactly the
/// partners of the retained source points, so the map stays a bijection.
/// Otherwise both clouds are sampled independently and each retained
/// source point is mapped to the retained target point nearest to its
/// original partner.
inline DownsampledPair downsample_pair(const PointCloud& source, const PointCloud& target,
                                       const GroundTruthMap& gt, int n, std::uint64_t seed) {
  require(gt.size() == source.size(), "downsample_pair: gt size ", gt.size(),
          " != source size ", source.size());
  gt.validate(target.size());
  const IndexVec src_kept = sample_indices(source.n(), n, derive_seed(seed, 1));
  DownsampledPair out;
  out.source = select_rows(source, src_kept);
  if (gt.is_bijection(target.size())) {
    IndexVec tgt_kept(n);
    for (int i = 0; i < n; ++i) tgt_kept[i] = gt.target_index[src_kept[i]];
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return tgt_kept[a] < tgt_kept[b]; });
    IndexVec sorted_targets(n);
    out.gt.target_index.assign(n, 0);
    for (int pos = 0; pos < n; ++pos) {
      sorted_targets[pos] = tgt_kept[order[pos]];
      out.gt.target_index[order[pos]] = pos;
    }
    out.target = select_rows(target, sorted_targets);
    return out;
  }
  const int nt = std::min(n, target.n());
  const IndexVec tgt_kept = sample_indices(target.n(), nt, derive_seed(seed, 2));
  out.target = select_rows(target, tgt_kept);
  Points partners(n, 3);
  for (int i = 0; i < n; ++i) partners.row(i) = target.points().row(gt.target_index[src_kept[i]]);
  const KnnGraph nn = knn_indices(partners, out.target.points(), 1);
  out.gt.target_index.resize(n);
  for (int i = 0; i < n; ++i) out.gt.target_index[i] = nn.indices(i, 0);
  return out;
}

// ---------------------------------------------------------------------------
// Plain-text formats: a cloud file is "<N>" followed by N lines "x y z";
// a ground-truth / mapping file is one 0-based target index per line.

inline void write_cloud(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path);
  require(out.good(), "cannot open ", path.string(), " for writing");
  out.precision(std::numeric_limits<double>::max_digits10);
  out << cloud.n() << '\n';
  for (int i = 0; i < cloud.n(); ++i) {
    const auto p = cloud.point(i);
    out << p(0) << ' ' << p(1) << ' ' << p(2) << '\n';
  }
  require(out.good(), "write failed for ", path.string());
}

inline PointCloud read_cloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open point cloud file ", path.string());
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), path.string(), ":1: missing point count");
  long long count = -1;
  {
    std::istringstream is(line);
    std::string rest;
    require(static_cast<bool>(is >> count) && !(is >> rest) && count >= 1, path.string(),
            ":1: malformed point count '", line, "'");
  }
  Points pts(count, 3);
  for (long long i = 0; i < count; ++i) {
    const long long lineno = i + 2;
    require(static_cast<bool>(std::getline(in, line)), path.string(), ":", lineno,
            ": expected ", count, " points, file ended early");
    std::istringstream is(line);
    double x, y, z;
    std::string rest;
    require(static_cast<bool>(is >> x >> y >> z) && !(is >> rest), path.string(), ":", lineno,
            ": malformed coordinate line '", line, "'");
    require(std::isfinite(x) && std::isfinite(y) && std::isfinite(z), path.string(), ":",
            lineno, ": non-finite coordinate");
    pts.row(i) << x, y, z;
  }
  return PointCloud(std::move(pts));
}

inline void write_indices(const std::filesystem::path& path, const IndexVec& idx) {
  std::ofstream out(path);
  require(out.good(), "cannot open ", path.string(), " for writing");
  for (int v : idx) out << v << '\n';
  require(out.good(), "write failed for ", path.string());
}

inline IndexVec read_indices(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open index file ", path.string());
  IndexVec out;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream is(line);
    long long v;
    std::string rest;
    require(static_cast<bool>(is >> v) && !(is >> rest) && v >= 0 &&
                v <= std::numeric_limits<int>::max(),
            path.string(), ":", lineno, ": malformed index line '", line, "'");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

inline GroundTruthMap read_ground_truth(const std::filesystem::path& path) {
  return GroundTruthMap{read_indices(path)};
}

}  // namespace seornet
