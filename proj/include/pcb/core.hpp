#pragma once

// Point-cloud data model and the geometric primitives every other module
// builds on: farthest point sampling, feature guards, normalization and
// size harmonization.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pcb/error.hpp"
#include "pcb/rng.hpp"

namespace pcb {

using Positions = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Features = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;

// n points, each a spatial position plus a c-vector of additional features
// (intensity, normals, ...). Row i of `positions` and row i of `features`
// describe the same point.
struct PointCloud {
  Positions positions;
  Features features;

  PointCloud() = default;
  PointCloud(Positions p, Features f) : positions(std::move(p)), features(std::move(f)) {}

  std::size_t size() const { return static_cast<std::size_t>(positions.rows()); }
  std::size_t feature_dim() const { return static_cast<std::size_t>(features.cols()); }

  // Throws InvalidArgument when the structural invariants do not hold.
  void validate() const {
    if (positions.rows() < 1) throw InvalidArgument("point cloud must contain at least one point");
    if (features.rows() != positions.rows())
      throw InvalidArgument("positions and features disagree on point count");
    if (!positions.allFinite() || !features.allFinite())
      throw InvalidArgument("point cloud contains non-finite values");
  }

  // Rows in the given order; features travel with their points.
  PointCloud select(std::span<const std::size_t> idx) const {
    PointCloud out;
    out.positions.resize(static_cast<Eigen::Index>(idx.size()), 3);
    out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto i = static_cast<Eigen::Index>(idx[r]);
      out.positions.row(static_cast<Eigen::Index>(r)) = positions.row(i);
      out.features.row(static_cast<Eigen::Index>(r)) = features.row(i);
    }
    return out;
  }

  bool operator==(const PointCloud& o) const {
    return positions.rows() == o.positions.rows() && features.cols() == o.features.cols() &&
           features.rows() == o.features.rows() && positions == o.positions && features == o.features;
  }
};

struct LabeledCloud {
  PointCloud cloud;
  int label = 0;
  bool poisoned = false;

  bool operator==(const LabeledCloud&) const = default;
};

// Post-shift feature sanitizer G.
struct GuardMode {
  enum class Kind { clip, unit };
  Kind kind = Kind::clip;
  double lo = 0.0;
  double hi = 1.0;

  static GuardMode clip(double lo, double hi) {
    if (!(lo < hi)) throw InvalidArgument("clip guard requires lo < hi");
    return GuardMode{Kind::clip, lo, hi};
  }
  static GuardMode unit() { return GuardMode{Kind::unit, 0.0, 0.0}; }

  bool operator==(const GuardMode&) const = default;
};

// Accepts writable expressions such as `features.row(i)`.
template <class Derived>
void apply_guard_inplace(const Eigen::MatrixBase<Derived>& target, const GuardMode& guard) {
  auto& v = const_cast<Eigen::MatrixBase<Derived>&>(target);
  if (guard.kind == GuardMode::Kind::clip) {
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = std::min(std::max(v(i), guard.lo), guard.hi);
    return;
  }
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) throw DegenerateFeature("unit guard applied to a zero-norm feature vector");
  v /= norm;
}

inline Vec apply_guard(const Vec& features, const GuardMode& guard) {
  Vec out = features;
  apply_guard_inplace(out, guard);
  return out;
}

inline double squared_distance(const Positions& p, Eigen::Index a, Eigen::Index b) {
  const double dx = p(a, 0) - p(b, 0);
  const double dy = p(a, 1) - p(b, 1);
  const double dz = p(a, 2) - p(b, 2);
  return dx * dx + dy * dy + dz * dz;
}

// Greedy max-min subset over spatial positions. The first index is `start`;
// each later pick maximizes the distance to the already-selected set, ties
// going to the lowest index.
inline std::vector<std::size_t> fps_select(const PointCloud& cloud, std::size_t w, std::size_t start = 0) {
  const std::size_t n = cloud.size();
  if (w == 0 || w > n) throw InvalidArgument("fps_select: w must satisfy 1 <= w <= n");
  if (start >= n) throw InvalidArgument("fps_select: start index out of range");

  std::vector<std::size_t> picked;
  picked.reserve(w);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<char> taken(n, 0);

  std::size_t cur = start;
  for (std::size_t t = 0; t < w; ++t) {
    picked.push_back(cur);
    taken[cur] = 1;
    if (t + 1 == w) break;
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (taken[j]) continue;
      const double d = squared_distance(cloud.positions, static_cast<Eigen::Index>(cur), static_cast<Eigen::Index>(j));
      if (d < min_d2[j]) min_d2[j] = d;
      if (min_d2[j] > best_d) {
        best_d = min_d2[j];
        best = j;
      }
    }
    cur = best;
  }
  return picked;
}

// Unit-sphere normalization of positions. Features are untouched.
inline PointCloud center_and_scale(const PointCloud& cloud) {
  cloud.validate();
  PointCloud out = cloud;
  const Eigen::RowVector3d centroid = out.positions.colwise().mean();
  out.positions.rowwise() -= centroid;
  const double radius = out.positions.rowwise().norm().maxCoeff();
  if (radius > 0.0) out.positions /= radius;
  return out;
}

// m points: FPS from index 0 when m <= n, otherwise uniform draws with replacement.
inline PointCloud resample(const PointCloud& cloud, std::size_t m, std::uint64_t seed) {
  cloud.validate();
  if (m == 0) throw InvalidArgument("resample: m must be >= 1");
  const std::size_t n = cloud.size();
  if (m <= n) {
    const auto idx = fps_select(cloud, m, 0);
    return cloud.select(idx);
  }
  Rng rng = make_rng(seed, {0x5e5a});
  std::vector<std::size_t> idx(m);
  for (auto& i : idx) i = uniform_index(rng, n);
  return cloud.select(idx);
}

}  // namespace pcb
