#pragma once

// Synthetic articulated "stick figure" shapes with exact point identity.
//
// Every template shares one surface parameterization: sample i is the
// same (part, u, v) location on every body, whatever its proportions or
// pose. Two posed instances therefore correspond index-by-index, which
// gives exact ground truth for any pair.

#include "seornet/geometry.hpp"

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace seornet {

/// Body parts. Limbs and torso are articulated cylinders, the rest are
/// ellipsoid blobs. Head, nose and feet break front/back symmetry; the
/// left/right limbs are mirror images.
enum class BodyPart : int {
  Torso = 0,
  LeftArm,
  RightArm,
  LeftLeg,
  RightLeg,
  Head,
  Nose,
  LeftFoot,
  RightFoot,
  Count
};

inline constexpr int kBodyPartCount = static_cast<int>(BodyPart::Count);

struct BodyProportions {
  double torso_length = 0.60, torso_rx = 0.10, torso_ry = 0.17;
  double hip_height = 0.95;
  double shoulder_offset = 0.21, shoulder_drop = 0.06;
  double arm_length = 0.62, arm_radius = 0.045;
  double hip_offset = 0.09;
  double leg_length = 0.90, leg_radius = 0.065;
  Eigen::Vector3d head_radii{0.10, 0.09, 0.12};
  Eigen::Vector3d nose_radii{0.05, 0.03, 0.035};
  Eigen::Vector3d foot_radii{0.12, 0.045, 0.035};
};

/// Surface sample in part-local parameter space.
struct SurfaceSample {
  BodyPart part;
  double u, v;
};

/// Bounds on deformations; a null deformation is always valid.
struct DeformLimits {
  double arm_raise = 1.0, elbow = 1.0, leg_swing = 0.5, knee = 0.8, torso_lean = 0.2;
  double scale_jitter = 0.08;
};

/// Joint angles (radians) and global scale applied to a template.
struct DeformParams {
  std::array<double, 2> arm_raise{0, 0};  // about the body's front axis; + lifts the arm
  std::array<double, 2> elbow{0, 0};
  std::array<double, 2> leg_swing{0, 0};  // about the lateral axis; + swings forward
  std::array<double, 2> knee{0, 0};
  double torso_lean = 0;
  double scale = 1.0;

  static DeformParams random(Rng& rng, const DeformLimits& lim = {}) {
    DeformParams d;
    for (int s = 0; s < 2; ++s) {
      d.arm_raise[s] = rng.uniform(-lim.arm_raise, 0.4 * lim.arm_raise);
      d.elbow[s] = rng.uniform(0.0, lim.elbow);
      d.leg_swing[s] = rng.uniform(-lim.leg_swing, lim.leg_swing);
      d.knee[s] = rng.uniform(0.0, lim.knee);
    }
    d.torso_lean = rng.uniform(-lim.torso_lean, lim.torso_lean);
    d.scale = 1.0 + rng.uniform(-lim.scale_jitter, lim.scale_jitter);
    return d;
  }

  void validate(const DeformLimits& lim = {}) const {
    auto within = [](double v, double bound, const char* name) {
      require(std::isfinite(v) && std::abs(v) <= bound + 1e-12, "deformation ", name, " = ", v,
              " exceeds limit ", bound);
    };
    for (int s = 0; s < 2; ++s) {
      within(arm_raise[s], lim.arm_raise, "arm_raise");
      within(elbow[s], lim.elbow, "elbow");
      within(leg_swing[s], lim.leg_swing, "leg_swing");
      within(knee[s], lim.knee, "knee");
    }
    within(torso_lean, lim.torso_lean, "torso_lean");
    require(std::isfinite(scale) && std::abs(scale - 1.0) <= lim.scale_jitter + 1e-12,
            "deformation scale = ", scale, " outside 1 +/- ", lim.scale_jitter);
  }
};

class ShapeTemplate {
 public:
  /// Default surface size; clouds are downsampled from this.
  static constexpr int kDefaultSamples = 2048;

  /// Proportions vary with `id`; the surface parameterization depends only
  /// on (`samples`, `layout_seed`) so templates with equal layout
  /// correspond point by point.
  static ShapeTemplate make(int id, int samples = kDefaultSamples,
                            std::uint64_t layout_seed = 2023) {
    require(samples >= 16, "ShapeTemplate: needs at least 16 samples");
    ShapeTemplate t;
    t.id_ = id;
    t.layout_seed_ = layout_seed;
    if (id != 0) {
      Rng rng(derive_seed(0x5EED, static_cast<std::uint64_t>(id)));
      auto jitter = [&](double& v, double frac) { v *= 1.0 + rng.uniform(-frac, frac); };
      auto& p = t.prop_;
      jitter(p.torso_length, 0.12);
      jitter(p.torso_rx, 0.2);
      jitter(p.torso_ry, 0.15);
      jitter(p.hip_height, 0.1);
      jitter(p.shoulder_offset, 0.1);
      jitter(p.arm_length, 0.12);
      jitter(p.arm_radius, 0.2);
      jitter(p.hip_offset, 0.15);
      jitter(p.leg_length, 0.1);
      jitter(p.leg_radius, 0.2);
      for (int c = 0; c < 3; ++c) {
        jitter(p.head_radii(c), 0.12);
        jitter(p.foot_radii(c), 0.12);
      }
    }
    t.samples_ = make_layout(samples, layout_seed);
    t.canonical_ = t.pose(DeformParams{});
    return t;
  }

  int id() const { return id_; }
  int size() const { return static_cast<int>(samples_.size()); }
  std::uint64_t layout_seed() const { return layout_seed_; }
  const BodyProportions& proportions() const { return prop_; }
  const std::vector<SurfaceSample>& samples() const { return samples_; }
  const PointCloud& canonical() const { return canonical_; }

  std::vector<int> segment_labels() const {
    std::vector<int> out;
    for (const auto& s : samples_) out.push_back(static_cast<int>(s.part));
    return out;
  }

  /// Posed surface, centered so the vertical axis passes through the
  /// centroid. Facing +x, left side +y, up +z.
  PointCloud pose(const DeformParams& d) const {
    const auto& p = prop_;
    using V = Eigen::Vector3d;
    const double ls = std::sin(d.torso_lean), lc = std::cos(d.torso_lean);
    const V hip_center(0, 0, p.hip_height);
    const V torso_axis(ls, 0, lc);  // leaning forward about the lateral axis
    const V neck = hip_center + p.torso_length * torso_axis;
    const V head_center = neck + (p.head_radii.z() + 0.02) * torso_axis;
    const V front(lc, 0, -ls);
    const V nose_center = head_center + (p.head_radii.x() + 0.3 * p.nose_radii.x()) * front;

    Points out(samples_.size(), 3);
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const auto& s = samples_[i];
      V q;
      switch (s.part) {
        case BodyPart::Torso: {
          const double phi = kTwoPi * s.v;
          q = hip_center + s.u * p.torso_length * torso_axis +
              p.torso_rx * std::cos(phi) * front + p.torso_ry * std::sin(phi) * V(0, 1, 0);
          break;
        }
        case BodyPart::LeftArm:
        case BodyPart::RightArm: {
          const int side = s.part == BodyPart::LeftArm ? 0 : 1;
          const double sgn = side == 0 ? 1.0 : -1.0;
          const V shoulder =
              hip_center + (p.torso_length - p.shoulder_drop) * torso_axis +
              V(0, sgn * p.shoulder_offset, 0);
          // Raise about the front axis, then bend the forearm forward.
          const double a = d.arm_raise[side];
          const V dir(0, sgn * std::cos(a), std::sin(a));
          // dir x front: a positive bend swings the forearm toward +x.
          const V hinge(0, std::sin(a), -sgn * std::cos(a));
          q = limb_point(shoulder, dir, hinge, p.arm_length, p.arm_radius, d.elbow[side], s.u,
                         s.v);
          break;
        }
        case BodyPart::LeftLeg:
        case BodyPart::RightLeg: {
          const int side = s.part == BodyPart::LeftLeg ? 0 : 1;
          const double sgn = side == 0 ? 1.0 : -1.0;
          const V hip = hip_center + V(0, sgn * p.hip_offset, 0);
          const double a = d.leg_swing[side];
          const V dir(std::sin(a), 0, -std::cos(a));
          // Knees flex backward on both sides.
          q = limb_point(hip, dir, V(0, 1, 0), p.leg_length, p.leg_radius, d.knee[side], s.u,
                         s.v);
          break;
        }
        case BodyPart::Head:
          q = head_center + ellipsoid_point(p.head_radii, s.u, s.v);
          break;
        case BodyPart::Nose:
          q = nose_center + ellipsoid_point(p.nose_radii, s.u, s.v);
          break;
        case BodyPart::LeftFoot:
        case BodyPart::RightFoot: {
          const int side = s.part == BodyPart::LeftFoot ? 0 : 1;
          const double sgn = side == 0 ? 1.0 : -1.0;
          const V hip = hip_center + V(0, sgn * p.hip_offset, 0);
          const double a = d.leg_swing[side];
          const V dir(std::sin(a), 0, -std::cos(a));
          const V ankle = limb_point(hip, dir, V(0, 1, 0), p.leg_length, 0.0, d.knee[side],
                                     1.0, 0.0);
          q = ankle + V(0.6 * p.foot_radii.x(), 0, 0) + ellipsoid_point(p.foot_radii, s.u, s.v);
          break;
        }
        default:
          fail("unknown body part");
      }
      out.row(i) = q.transpose();
    }
    Eigen::RowVector3d centroid = out.colwise().mean();
    out.rowwise() -= centroid;
    out *= d.scale;
    return PointCloud(std::move(out));
  }

 private:
  static Eigen::Vector3d ellipsoid_point(const Eigen::Vector3d& radii, double u, double v) {
    const double z = 2.0 * u - 1.0;
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = kTwoPi * v;
    return Eigen::Vector3d(radii.x() * r * std::cos(phi), radii.y() * r * std::sin(phi),
                           radii.z() * z);
  }

  /// Point on a two-segment limb from `root` along `dir`; the distal half
  /// rotates by `bend` about `hinge` at the midpoint.
  static Eigen::Vector3d limb_point(const Eigen::Vector3d& root, const Eigen::Vector3d& dir,
                                    const Eigen::Vector3d& hinge, double length, double radius,
                                    double bend, double u, double v) {
    Eigen::Vector3d a = hinge - hinge.dot(dir) * dir;
    if (a.norm() < 1e-9) a = dir.unitOrthogonal();
    a.normalize();
    const Eigen::Vector3d b = dir.cross(a);
    const double phi = kTwoPi * v;
    const Eigen::Vector3d ring = radius * (std::cos(phi) * a + std::sin(phi) * b);
    const Eigen::Vector3d joint = root + 0.5 * length * dir;
    if (u <= 0.5) return root + u * length * dir + ring;
    const Eigen::Matrix3d r = Eigen::AngleAxisd(bend, a).toRotationMatrix();
    return joint + r * ((u - 0.5) * length * dir + ring);
  }

  static std::vector<SurfaceSample> make_layout(int samples, std::uint64_t seed) {
    // Share of the surface budget per part (roughly area-proportional).
    const std::array<double, kBodyPartCount> share{0.26, 0.09, 0.09, 0.14, 0.14,
                                                   0.12, 0.03, 0.065, 0.065};
    double total = 0;
    for (double s : share) total += s;
    std::vector<SurfaceSample> out;
    Rng rng(seed);
    int assigned = 0;
    for (int part = 0; part < kBodyPartCount; ++part) {
      int count = part + 1 == kBodyPartCount ? samples - assigned
                                             : static_cast<int>(samples * share[part] / total);
      assigned += count;
      for (int i = 0; i < count; ++i)
        out.push_back({static_cast<BodyPart>(part), rng.uniform(), rng.uniform()});
    }
    return out;
  }

  int id_ = 0;
  std::uint64_t layout_seed_ = 0;
  BodyProportions prop_;
  std::vector<SurfaceSample> samples_;
  PointCloud canonical_;
};

struct ShapePair {
  PointCloud source;
  PointCloud target;
  std::optional<GroundTruthMap> gt;
  /// Rotation of the source relative to the target about z, when known.
  std::optional<double> theta;
};

struct PairOptions {
  bool shuffle_target = true;
  /// When set, the source is additionally rotated by this angle about z.
  std::optional<double> rotation;
};

/// Poses two templates (which must share a surface layout), co-downsamples
/// both with one index subset, and optionally shuffles the target while
/// tracking the ground truth.
inline ShapePair generate_pair(const ShapeTemplate& source_template,
                               const ShapeTemplate& target_template, const DeformParams& deform_a,
                               const DeformParams& deform_b, int n, std::uint64_t seed,
                               const PairOptions& opt = {}) {
  require(source_template.size() == target_template.size() &&
              source_template.layout_seed() == target_template.layout_seed(),
          "generate_pair: templates do not share a surface layout");
  require(n >= 1 && n <= source_template.size(), "generate_pair: n = ", n,
          " outside [1, template size ", source_template.size(), "]");
  deform_a.validate();
  deform_b.validate();
  const PointCloud a = source_template.pose(deform_a);
  const PointCloud b = target_template.pose(deform_b);
  const IndexVec kept = sample_indices(a.n(), n, derive_seed(seed, 11));
  ShapePair pair;
  pair.source = select_rows(a, kept);
  PointCloud target = select_rows(b, kept);
  GroundTruthMap gt = GroundTruthMap::identity(n);
  if (opt.shuffle_target) {
    // target'[j] = target[perm[j]]; source i's partner moves to inv(perm)[i].
    IndexVec perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), Rng(derive_seed(seed, 12)).engine());
    target = select_rows(target, perm);
    gt = GroundTruthMap{perm}.inverse();
  }
  pair.target = std::move(target);
  pair.gt = std::move(gt);
  if (opt.rotation) {
    ZRotation rot(*opt.rotation);
    pair.source = rotate_z(pair.source, rot);
    pair.theta = rot.angle();
  }
  return pair;
}

inline ShapePair generate_pair(const ShapeTemplate& tmpl, const DeformParams& deform_a,
                               const DeformParams& deform_b, int n, std::uint64_t seed,
                               const PairOptions& opt = {}) {
  return generate_pair(tmpl, tmpl, deform_a, deform_b, n, seed, opt);
}

struct SynthOptions {
  int pairs = 200;
  int points = 256;
  std::uint64_t seed = 7;
  /// Number of distinct body proportions drawn from.
  int templates = 8;
  /// Rotate each source by a stratified angle covering all bins evenly.
  bool rotation_labels = false;
  int bins = 8;
  bool shuffle_target = true;
  /// Pair two different bodies instead of two poses of one body.
  bool cross_template = true;
};

/// Dataset of independent pairs; pair i depends only on (seed, i).
inline std::vector<ShapePair> synthesize_dataset(const SynthOptions& o) {
  require(o.pairs >= 1 && o.templates >= 1 && o.bins >= 1, "synthesize_dataset: bad options");
  std::vector<ShapeTemplate> templates;
  for (int t = 0; t < o.templates; ++t)
    templates.push_back(ShapeTemplate::make(static_cast<int>(derive_seed(o.seed, 0x7E, t) % 100000) + 1));
  std::vector<ShapePair> out;
  for (int i = 0; i < o.pairs; ++i) {
    const std::uint64_t ps = derive_seed(o.seed, 0xDA7A, static_cast<std::uint64_t>(i));
    Rng rng(ps);
    const int ta = rng.index(o.templates);
    const int tb = o.cross_template ? rng.index(o.templates) : ta;
    const DeformParams da = DeformParams::random(rng);
    const DeformParams db = DeformParams::random(rng);
    PairOptions opt;
    opt.shuffle_target = o.shuffle_target;
    if (o.rotation_labels) {
      const int bin = i % o.bins;
      opt.rotation = (bin + rng.uniform()) * kTwoPi / o.bins;
    }
    out.push_back(generate_pair(templates[ta], templates[tb], da, db, o.points, ps, opt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset files: one cloud file per side, one ground-truth file per pair,
// and a comma-separated manifest "source,target,gt,theta" whose paths are
// relative to the manifest's directory.

struct ManifestRecord {
  std::string source, target, gt;
  std::optional<double> theta;
};

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  require(in.good(), "cannot open manifest ", manifest.string());
  std::vector<ManifestRecord> out;
  std::string line;
  long long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.rfind("source,", 0) == 0 || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    require(fields.size() >= 2 && fields.size() <= 4, manifest.string(), ":", lineno,
            ": expected 2-4 comma-separated fields, got ", fields.size());
    ManifestRecord r;
    r.source = fields[0];
    r.target = fields[1];
    if (fields.size() > 2) r.gt = fields[2];
    if (fields.size() > 3 && !fields[3].empty()) {
      try {
        std::size_t used = 0;
        r.theta = std::stod(fields[3], &used);
        require(used == fields[3].size(), "trailing characters");
      } catch (const std::exception&) {
        fail(manifest.string(), ":", lineno, ": malformed theta '", fields[3], "'");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ShapePair> read_dataset(const std::filesystem::path& manifest) {
  const auto base = manifest.parent_path();
  std::vector<ShapePair> out;
  for (const auto& r : read_manifest(manifest)) {
    auto resolve = [&](const std::string& rel) {
      const std::filesystem::path p =
          std::filesystem::path(rel).is_absolute() ? std::filesystem::path(rel) : base / rel;
      require(std::filesystem::exists(p), "manifest ", manifest.string(),
              " references missing file ", p.string());
      return p;
    };
    ShapePair pair;
    pair.source = read_cloud(resolve(r.source));
    pair.target = read_cloud(resolve(r.target));
    if (!r.gt.empty()) {
      GroundTruthMap gt = read_ground_truth(resolve(r.gt));
      require(gt.size() == pair.source.size(), "ground truth ", r.gt, " has ", gt.size(),
              " entries for ", pair.source.size(), " source points");
      gt.validate(pair.target.size());
      pair.gt = std::move(gt);
    }
    pair.theta = r.theta;
    out.push_back(std::move(pair));
  }
  return out;
}

/// Writes pair_XXXX_{src,tgt}.xyz / pair_XXXX_gt.txt and manifest.csv;
/// returns the manifest path.
inline std::filesystem::path write_dataset(const std::vector<ShapePair>& pairs,
                                           const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.csv";
  std::ofstream out(manifest);
  require(out.good(), "cannot write manifest ", manifest.string());
  out.precision(17);
  out << "source,target,gt,theta\n";
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "pair_%04zu", i);
    const std::string src = std::string(stem) + "_src.xyz";
    const std::string tgt = std::string(stem) + "_tgt.xyz";
    const std::string gt = pairs[i].gt ? std::string(stem) + "_gt.txt" : "";
    write_cloud(dir / src, pairs[i].source);
    write_cloud(dir / tgt, pairs[i].target);
    if (pairs[i].gt) write_indices(dir / gt, pairs[i].gt->target_index);
    out << src << ',' << tgt << ',' << gt << ',';
    if (pairs[i].theta) out << *pairs[i].theta;
    out << '\n';
  }
  require(out.good(), "write failed for ", manifest.string());
  return manifest;
}

}  // namespace seornet
