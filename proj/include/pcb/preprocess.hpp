#pragma once

// Preprocessing defenses applied to training clouds: statistical outlier
// removal and the random geometric augmentations. Every op here drops or moves
// points; none of them writes a feature value (the strict-geometry rotation
// flag is the one opt-in exception).

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>
#include <variant>
#include <vector>

#include "pcb/core.hpp"

namespace pcb {

struct SorOp {
  std::size_t k = 30;
  double delta = 2.0;
};
// Rotation about the x axis only.
struct RotationOp {
  double max_deg = 20.0;
  bool rotate_features = false;
};
// Rotation about all three axes.
struct Rotation3dOp {
  double max_deg = 360.0;
  bool rotate_features = false;
};
struct ScalingOp {
  double lo = 0.5;
  double hi = 1.5;
};
struct ShiftOp {
  double extent = 0.1;
};
struct DropoutOp {
  double max_frac = 0.5;
};
struct JitterOp {
  double sigma = 0.02;
};

using PreprocessOp = std::variant<SorOp, RotationOp, Rotation3dOp, ScalingOp, ShiftOp, DropoutOp, JitterOp>;

inline std::string op_name(const PreprocessOp& op) {
  static constexpr std::array<const char*, 7> names{"sor", "rotation", "rotation3d", "scaling", "shift", "dropout", "jitter"};
  return names[op.index()];
}

inline void validate_op(const PreprocessOp& op) {
  std::visit(
      [](const auto& o) {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, SorOp>) {
          if (o.k < 1 || !(o.delta > 0)) throw InvalidArgument("sor: need k >= 1 and delta > 0");
        } else if constexpr (std::is_same_v<T, RotationOp> || std::is_same_v<T, Rotation3dOp>) {
          if (!(o.max_deg >= 0)) throw InvalidArgument("rotation: max_deg must be >= 0");
        } else if constexpr (std::is_same_v<T, ScalingOp>) {
          if (!(o.lo <= o.hi)) throw InvalidArgument("scaling: need lo <= hi");
        } else if constexpr (std::is_same_v<T, ShiftOp>) {
          if (!(o.extent >= 0)) throw InvalidArgument("shift: extent must be >= 0");
        } else if constexpr (std::is_same_v<T, DropoutOp>) {
          if (!(o.max_frac >= 0 && o.max_frac < 1)) throw InvalidArgument("dropout: need 0 <= max_frac < 1");
        } else if constexpr (std::is_same_v<T, JitterOp>) {
          if (!(o.sigma >= 0)) throw InvalidArgument("jitter: sigma must be >= 0");
        }
      },
      op);
}

// ---------------------------------------------------------------------------

// Mean Euclidean distance from each point to its k nearest neighbors.
inline std::vector<double> knn_mean_distances(const PointCloud& cloud, std::size_t k) {
  const std::size_t n = cloud.size();
  std::vector<double> out(n);
  std::vector<double> d(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) d[m++] = squared_distance(cloud.positions, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    double sum = 0.0;
    for (std::size_t t = 0; t < k; ++t) sum += std::sqrt(d[t]);
    out[i] = sum / static_cast<double>(k);
  }
  return out;
}

// Keeps points whose mean k-NN distance is at most mean + delta * std (sample
// std). Never returns an empty cloud.
inline PointCloud sor_filter(const PointCloud& cloud, std::size_t k, double delta) {
  cloud.validate();
  const std::size_t n = cloud.size();
  if (k < 1 || n <= k) throw InvalidArgument("sor_filter: need n > k >= 1");
  if (!(delta > 0)) throw InvalidArgument("sor_filter: delta must be > 0");
  const auto d = knn_mean_distances(cloud, k);
  double mean = 0.0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  const double threshold = mean + delta * std::sqrt(var);

  std::vector<std::size_t> keep;
  keep.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] <= threshold) keep.push_back(i);
  if (keep.empty()) keep.push_back(static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin()));
  return cloud.select(keep);
}

inline Eigen::Matrix3d rotation_xyz(double ax, double ay, double az) {
  const Eigen::Matrix3d rx = Eigen::AngleAxisd(ax, Vec3::UnitX()).toRotationMatrix();
  const Eigen::Matrix3d ry = Eigen::AngleAxisd(ay, Vec3::UnitY()).toRotationMatrix();
  const Eigen::Matrix3d rz = Eigen::AngleAxisd(az, Vec3::UnitZ()).toRotationMatrix();
  // x first, then y, then z.
  return rz * ry * rx;
}

inline PointCloud rotate(const PointCloud& cloud, const Eigen::Matrix3d& R, bool rotate_features = false) {
  PointCloud out = cloud;
  out.positions = cloud.positions * R.transpose();
  if (rotate_features && cloud.features.cols() == 3) out.features = cloud.features * R.transpose();
  return out;
}

// Angles uniform in [-max_deg, max_deg] per enabled axis.
inline PointCloud random_rotation(const PointCloud& cloud, double max_deg, std::array<bool, 3> axes, Rng& rng,
                                  bool rotate_features = false) {
  if (!(max_deg >= 0)) throw InvalidArgument("random_rotation: max_deg must be >= 0");
  std::array<double, 3> ang{0.0, 0.0, 0.0};
  const double lim = max_deg * std::numbers::pi / 180.0;
  for (int a = 0; a < 3; ++a)
    if (axes[static_cast<std::size_t>(a)]) ang[static_cast<std::size_t>(a)] = uniform(rng, -lim, lim);
  if (ang == std::array<double, 3>{0.0, 0.0, 0.0}) return cloud;
  return rotate(cloud, rotation_xyz(ang[0], ang[1], ang[2]), rotate_features);
}

inline PointCloud random_scaling(const PointCloud& cloud, double lo, double hi, Rng& rng) {
  if (!(lo <= hi)) throw InvalidArgument("random_scaling: need lo <= hi");
  const double f = lo == hi ? lo : uniform(rng, lo, hi);
  if (f == 1.0) return cloud;
  PointCloud out = cloud;
  out.positions *= f;
  return out;
}

inline PointCloud random_shift(const PointCloud& cloud, double extent, Rng& rng) {
  if (!(extent >= 0)) throw InvalidArgument("random_shift: extent must be >= 0");
  if (extent == 0) return cloud;
  const Eigen::RowVector3d t(uniform(rng, -extent, extent), uniform(rng, -extent, extent), uniform(rng, -extent, extent));
  PointCloud out = cloud;
  out.positions.rowwise() += t;
  return out;
}

// Removes floor(U(0, max_frac) * n) points, keeping at least one; survivors
// keep their original order.
inline PointCloud random_dropout(const PointCloud& cloud, double max_frac, Rng& rng) {
  if (!(max_frac >= 0 && max_frac < 1)) throw InvalidArgument("random_dropout: need 0 <= max_frac < 1");
  const std::size_t n = cloud.size();
  if (max_frac == 0 || n == 1) return cloud;
  const double frac = uniform(rng, 0.0, max_frac);
  const std::size_t drop = std::min(static_cast<std::size_t>(std::floor(frac * static_cast<double>(n))), n - 1);
  if (drop == 0) return cloud;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < drop; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  std::vector<std::size_t> keep(idx.begin() + static_cast<std::ptrdiff_t>(drop), idx.end());
  std::sort(keep.begin(), keep.end());
  return cloud.select(keep);
}

inline PointCloud random_jitter(const PointCloud& cloud, double sigma, Rng& rng) {
  if (!(sigma >= 0)) throw InvalidArgument("random_jitter: sigma must be >= 0");
  if (sigma == 0) return cloud;
  PointCloud out = cloud;
  std::normal_distribution<double> g(0.0, sigma);
  for (Eigen::Index i = 0; i < out.positions.rows(); ++i)
    for (int k = 0; k < 3; ++k) out.positions(i, k) += g(rng);
  return out;
}

inline PointCloud apply_op(const PointCloud& cloud, const PreprocessOp& op, Rng& rng) {
  return std::visit(
      [&](const auto& o) -> PointCloud {
        using T = std::decay_t<decltype(o)>;
        if constexpr (std::is_same_v<T, SorOp>) return sor_filter(cloud, o.k, o.delta);
        else if constexpr (std::is_same_v<T, RotationOp>) return random_rotation(cloud, o.max_deg, {true, false, false}, rng, o.rotate_features);
        else if constexpr (std::is_same_v<T, Rotation3dOp>) return random_rotation(cloud, o.max_deg, {true, true, true}, rng, o.rotate_features);
        else if constexpr (std::is_same_v<T, ScalingOp>) return random_scaling(cloud, o.lo, o.hi, rng);
        else if constexpr (std::is_same_v<T, ShiftOp>) return random_shift(cloud, o.extent, rng);
        else if constexpr (std::is_same_v<T, DropoutOp>) return random_dropout(cloud, o.max_frac, rng);
        else return random_jitter(cloud, o.sigma, rng);
      },
      op);
}

// ---------------------------------------------------------------------------

struct Pipeline {
  std::vector<PreprocessOp> ops;
  std::uint64_t seed = 0;

  bool empty() const { return ops.empty(); }
  void validate() const {
    for (const auto& op : ops) validate_op(op);
  }
};

// The seven defenses in sweep order: SOR(30, 2), rotation 20° about x,
// rotation-3D 360°, scaling U(0.5, 1.5), shift U([-0.1, 0.1]^3),
// dropout 0-50%, jitter N(0, 0.02^2).
inline std::vector<PreprocessOp> standard_defense_ops() {
  return {SorOp{30, 2.0}, RotationOp{20.0}, Rotation3dOp{360.0}, ScalingOp{0.5, 1.5},
          ShiftOp{0.1},   DropoutOp{0.5},   JitterOp{0.02}};
}

// First `length` standard ops (a row of the cumulative sweep).
inline Pipeline standard_pipeline_prefix(std::size_t length, std::uint64_t seed) {
  auto ops = standard_defense_ops();
  if (length > ops.size()) throw InvalidArgument("pipeline prefix longer than the standard op list");
  ops.resize(length);
  return Pipeline{std::move(ops), seed};
}

inline PointCloud pipeline_apply(const PointCloud& cloud, const Pipeline& pipeline, Rng& rng) {
  PointCloud out = cloud;
  for (const auto& op : pipeline.ops) out = apply_op(out, op, rng);
  return out;
}

// The deterministic part of a pipeline (SOR), applied to inputs at inference.
// Random augmentations only act at training time.
inline Pipeline inference_pipeline(const Pipeline& pipeline) {
  Pipeline out{{}, pipeline.seed};
  for (const auto& op : pipeline.ops)
    if (std::holds_alternative<SorOp>(op)) out.ops.push_back(op);
  return out;
}

// Randomness derived from (pipeline seed, sample index, epoch).
inline PointCloud pipeline_apply(const PointCloud& cloud, const Pipeline& pipeline, std::size_t sample,
                                 std::size_t epoch) {
  if (pipeline.empty()) return cloud;
  Rng rng = make_rng(pipeline.seed, {sample, epoch, 0x9199});
  return pipeline_apply(cloud, pipeline, rng);
}

}  // namespace pcb
