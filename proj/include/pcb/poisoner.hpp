#pragma once

// Trigger implanting (feature shift on a point subset) and poisoned-dataset
// construction, plus the spatial ball trigger used as a contrast baseline.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "pcb/core.hpp"
#include "pcb/dataset.hpp"
#include "pcb/poison_spec.hpp"

namespace pcb {

// Per-sample target used by all-to-all poisoning.
inline int all_to_all_target(int y, int K) {
  if (K < 2) throw InvalidArgument("all_to_all_target: K must be >= 2");
  if (y < 0 || y >= K) throw InvalidArgument("all_to_all_target: label out of range");
  return (y + 1) % K;
}

// Indices of the subset Q. `salt` decorrelates random selections across clouds.
inline std::vector<std::size_t> select_subset(const PointCloud& cloud, const PoisonSpec& spec, std::uint64_t salt = 0) {
  const std::size_t n = cloud.size();
  if (spec.w < 1 || spec.w > n) throw InvalidArgument("implant_trigger: w must satisfy 1 <= w <= n");
  Rng rng = make_rng(spec.selection_seed, {salt, 0x5b5e7});
  if (spec.selection == Selection::fps) {
    const std::size_t start = spec.random_start ? uniform_index(rng, n) : 0;
    return fps_select(cloud, spec.w, start);
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  // Partial Fisher-Yates: the first w entries are a uniform w-subset.
  for (std::size_t i = 0; i < spec.w; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(spec.w);
  return idx;
}

// X^ = H(Q, s) ∪ (X − Q): selected points get guard(f + s); positions and
// every unselected row are copied bit-for-bit.
inline PointCloud implant_trigger(const PointCloud& cloud, const PoisonSpec& spec, std::uint64_t salt = 0) {
  cloud.validate();
  spec.trigger.validate();
  if (spec.trigger.dim() != cloud.feature_dim())
    throw InvalidArgument("implant_trigger: trigger dimension differs from feature dimension");
  const auto subset = select_subset(cloud, spec, salt);
  PointCloud out = cloud;
  const Eigen::RowVectorXd s = spec.trigger.shift.transpose();
  for (auto j : subset) {
    const auto r = static_cast<Eigen::Index>(j);
    out.features.row(r) = cloud.features.row(r) + s;
    apply_guard_inplace(out.features.row(r), spec.guard);
  }
  return out;
}

struct PoisonResult {
  Dataset dataset;
  std::vector<std::size_t> indices;
};

namespace detail {

// Uniform M-subset of `pool`, returned ascending.
inline std::vector<std::size_t> draw_without_replacement(std::vector<std::size_t> pool, std::size_t M,
                                                         std::uint64_t seed) {
  Rng rng = make_rng(seed, {0xD0150});
  for (std::size_t i = 0; i < M; ++i) std::swap(pool[i], pool[i + uniform_index(rng, pool.size() - i)]);
  pool.resize(M);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace detail

// M = round(rate * N), half up.
inline std::size_t poison_count(double rate, std::size_t N) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(N) + 0.5));
}

// D'_train = D_c ∪ D_p. The returned index list is ascending.
inline PoisonResult poison_dataset(const Dataset& dataset, const PoisonSpec& spec, std::uint64_t seed) {
  spec.validate(dataset.K);
  if (spec.mode == AttackMode::all_to_all && dataset.K < 2)
    throw InvalidArgument("poison_dataset: all-to-all needs K >= 2");
  const std::size_t M = poison_count(spec.rate, dataset.size());

  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (spec.mode == AttackMode::all_to_all || dataset.clouds[i].label != spec.target) eligible.push_back(i);
  if (eligible.size() < M) throw InvalidArgument("poison_dataset: not enough eligible clouds");
  const auto chosen = detail::draw_without_replacement(std::move(eligible), M, seed);

  PoisonResult out{dataset, chosen};
  for (auto i : chosen) {
    auto& lc = out.dataset.clouds[i];
    lc.cloud = implant_trigger(lc.cloud, spec, i);
    lc.label = spec.mode == AttackMode::all_to_one ? spec.target : all_to_all_target(lc.label, dataset.K);
    lc.poisoned = true;
  }
  out.dataset.poison = PoisonRecord{spec, seed, chosen};
  return out;
}

// Spatial ball trigger: `count` extra points uniform inside the ball, carrying
// the cloud's mean feature so the trigger stays purely geometric.
struct BallTrigger {
  Vec3 center = Vec3(1.5, 0.0, 0.0);
  double radius = 0.05;
  std::size_t count = 30;
};

inline PointCloud implant_ball_trigger(const PointCloud& cloud, const Vec3& center, double radius, std::size_t count,
                                       std::uint64_t seed) {
  cloud.validate();
  if (!(radius > 0.0)) throw InvalidArgument("implant_ball_trigger: radius must be > 0");
  if (count < 1) throw InvalidArgument("implant_ball_trigger: count must be >= 1");
  const auto n = static_cast<Eigen::Index>(cloud.size());
  const auto m = static_cast<Eigen::Index>(count);
  PointCloud out(Positions(n + m, 3), Features(n + m, cloud.features.cols()));
  out.positions.topRows(n) = cloud.positions;
  out.features.topRows(n) = cloud.features;
  const Eigen::RowVectorXd mean = cloud.features.colwise().mean();
  Rng rng = make_rng(seed, {0xBA11});
  std::normal_distribution<double> g(0.0, 1.0);
  for (Eigen::Index i = 0; i < m; ++i) {
    Vec3 d(g(rng), g(rng), g(rng));
    while (d.norm() < 1e-12) d = Vec3(g(rng), g(rng), g(rng));
    const double r = radius * std::cbrt(uniform(rng, 0.0, 1.0));
    out.positions.row(n + i) = (center + r * d.normalized()).transpose();
    out.features.row(n + i) = mean;
  }
  return out;
}

inline PointCloud implant_ball_trigger(const PointCloud& cloud, const BallTrigger& ball, std::uint64_t seed) {
  return implant_ball_trigger(cloud, ball.center, ball.radius, ball.count, seed);
}

// Ball-trigger poisoning with the same sample selection and relabeling rules
// as poison_dataset (all-to-one only).
inline PoisonResult poison_dataset_ball(const Dataset& dataset, const BallTrigger& ball, int target, double rate,
                                        std::uint64_t seed) {
  if (target < 0 || target >= dataset.K) throw InvalidArgument("poison_dataset_ball: target out of range");
  if (!(rate > 0.0 && rate < 1.0)) throw InvalidArgument("poison_dataset_ball: rate must lie in (0, 1)");
  const std::size_t M = poison_count(rate, dataset.size());
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (dataset.clouds[i].label != target) eligible.push_back(i);
  if (eligible.size() < M) throw InvalidArgument("poison_dataset_ball: not enough eligible clouds");
  const auto chosen = detail::draw_without_replacement(std::move(eligible), M, seed);
  PoisonResult out{dataset, chosen};
  out.dataset.n = 0;
  for (auto i : chosen) {
    auto& lc = out.dataset.clouds[i];
    lc.cloud = implant_ball_trigger(lc.cloud, ball, derive_seed(seed, {i}));
    lc.label = target;
    lc.poisoned = true;
  }
  return out;
}

}  // namespace pcb
