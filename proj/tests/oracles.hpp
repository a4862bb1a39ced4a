#pragma once

// Independent brute-force oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <vector>

#include "pcb/bo.hpp"
#include "pcb/core.hpp"
#include "pcb/model.hpp"

namespace pcb::test {

// Statistical outlier removal by full sort of all neighbor distances and a
// two-pass sample std.
inline std::vector<std::size_t> sor_oracle_keep(const PointCloud& cloud, std::size_t k, double delta) {
  const std::size_t n = cloud.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> all;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double s = 0;
      for (int a = 0; a < 3; ++a) {
        const double t = cloud.positions(static_cast<Eigen::Index>(i), a) - cloud.positions(static_cast<Eigen::Index>(j), a);
        s += t * t;
      }
      all.push_back(s);
    }
    std::sort(all.begin(), all.end());
    double sum = 0;
    for (std::size_t t = 0; t < k; ++t) sum += std::sqrt(all[t]);
    d[i] = sum / static_cast<double>(k);
  }
  double mean = 0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : d) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  const double thr = mean + delta * std::sqrt(var);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < n; ++i)
    if (d[i] <= thr) keep.push_back(i);
  return keep;
}

// Brute-force check of the max-min rule: every pick after the first is at
// least as far from the earlier picks as any point not yet picked.
inline bool satisfies_max_min(const PointCloud& cloud, const std::vector<std::size_t>& sel) {
  const auto dist_to_set = [&](std::size_t q, std::size_t upto) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < upto; ++t) {
      const double dx = cloud.positions(q, 0) - cloud.positions(sel[t], 0);
      const double dy = cloud.positions(q, 1) - cloud.positions(sel[t], 1);
      const double dz = cloud.positions(q, 2) - cloud.positions(sel[t], 2);
      best = std::min(best, dx * dx + dy * dy + dz * dz);
    }
    return best;
  };
  for (std::size_t t = 1; t < sel.size(); ++t) {
    std::set<std::size_t> before(sel.begin(), sel.begin() + static_cast<std::ptrdiff_t>(t));
    const double chosen = dist_to_set(sel[t], t);
    for (std::size_t q = 0; q < cloud.size(); ++q) {
      if (before.count(q) || q == sel[t]) continue;
      const double d = dist_to_set(q, t);
      if (d > chosen) return false;
      if (d == chosen && q < sel[t]) return false;  // lowest-index tie rule
    }
  }
  return true;
}

// Dense oracle: explicit inverse of K + sigma_n^2 I via full-pivot LU.
inline Posterior dense_posterior(const std::vector<Observation>& obs, const KernelHyper& hp, double jitter, const Vec& s) {
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd K(n, n);
  Vec k(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r2 = ((obs[i].s - obs[j].s).array() / hp.lengthscale.array()).square().sum();
      K(i, j) = hp.signal_var * std::exp(-0.5 * r2) + (i == j ? jitter : 0.0);
    }
    k(i) = hp.signal_var * std::exp(-0.5 * ((obs[i].s - s).array() / hp.lengthscale.array()).square().sum());
    y(i) = obs[i].value - hp.prior_mean;
  }
  const Eigen::MatrixXd Kinv = K.fullPivLu().inverse();
  return {hp.prior_mean + k.dot(Kinv * y), hp.signal_var - k.dot(Kinv * k)};
}

// Minimum mean Euclidean cost over every permutation coupling.
inline double brute_force_wd(const PointCloud& a, const PointCloud& b) {
  std::vector<std::size_t> perm(a.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i), c = static_cast<Eigen::Index>(perm[i]);
      total += std::sqrt((a.positions.row(r) - b.positions.row(c)).squaredNorm() +
                         (a.features.row(r) - b.features.row(c)).squaredNorm());
    }
    best = std::min(best, total / static_cast<double>(perm.size()));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// Central differences over every parameter; returns the worst relative
// error. Entries where both gradients are below 1e-8 count as agreeing.
inline double max_fd_error(ClassifierParams<double> params, const std::vector<LabeledCloud>& batch) {
  const auto lg = loss_and_grad(params, std::span<const LabeledCloud>(batch));
  const double eps = 1e-6;
  double worst = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = params.data()[i];
    params.data()[i] = orig + eps;
    const double up = mean_loss(params, std::span<const LabeledCloud>(batch));
    params.data()[i] = orig - eps;
    const double down = mean_loss(params, std::span<const LabeledCloud>(batch));
    params.data()[i] = orig;
    const double fd = (up - down) / (2 * eps);
    const double an = lg.grad.data()[i];
    const double scale = std::max(std::abs(fd), std::abs(an));
    if (scale > 1e-8) worst = std::max(worst, std::abs(fd - an) / scale);
  }
  return worst;
}

// True when the input gradient is exactly zero on every point that wins no
// max-pool channel.
inline bool gradient_routing_exact(const ClassifierParams<double>& params, const PointCloud& cloud) {
  const auto fw = forward(params, cloud);
  VecX<double> dl = VecX<double>::Ones(params.K());
  MatX<double> gin = MatX<double>::Zero(static_cast<Eigen::Index>(cloud.size()), 3 + params.c());
  detail::backward(params, cloud, fw, dl, static_cast<ClassifierParams<double>*>(nullptr), &gin);
  std::vector<bool> winner(cloud.size(), false);
  for (auto a : fw.argmax) winner[a] = true;
  for (std::size_t i = 0; i < cloud.size(); ++i)
    if (!winner[i] && gin.row(static_cast<Eigen::Index>(i)).cwiseAbs().maxCoeff() != 0.0) return false;
  return true;
}

}  // namespace pcb::test
