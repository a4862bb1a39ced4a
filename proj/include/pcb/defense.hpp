#pragma once

// Detection defenses (STRIP, spectral signatures, adaptive feature noise),
// their scoring reports, and the Wasserstein stealth metric.

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcb/core.hpp"
#include "pcb/model.hpp"

namespace pcb {

// ---------------------------------------------------------------------------
// Optimal assignment (Hungarian method with potentials, O(n^3)).

struct Assignment {
  std::vector<std::size_t> row_to_col;
  double cost = 0;
};

inline Assignment solve_assignment(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (cost.cols() != cost.rows()) throw InvalidArgument("solve_assignment: cost matrix must be square");
  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based: column 0 is the virtual start.
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  Assignment a;
  a.row_to_col.assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) a.row_to_col[p[j] - 1] = j - 1;
  for (std::size_t i = 0; i < n; ++i)
    a.cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a.row_to_col[i]));
  return a;
}

// Exact transport between uniform marginals 1/n and 1/m for an n x m cost
// matrix: successive shortest paths on integer masses (m units per row, n per
// column) with Dijkstra over reduced costs. Returns <P, C> with P summing to 1.
inline double transport_uniform(const Eigen::MatrixXd& C) {
  const auto n = static_cast<std::size_t>(C.rows()), m = static_cast<std::size_t>(C.cols());
  if (n == 0 || m == 0) throw InvalidArgument("transport_uniform: empty cost matrix");
  constexpr double inf = std::numeric_limits<double>::infinity();
  const auto cost = [&](std::size_t i, std::size_t j) { return C(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)); };
  // Nodes 0..n-1 are rows, n..n+m-1 columns.
  const std::size_t V = n + m;
  std::vector<long long> supply(n, static_cast<long long>(m)), demand(m, static_cast<long long>(n));
  std::vector<long long> flow(n * m, 0);  // row-major
  std::vector<std::vector<std::size_t>> carriers(m);  // rows with positive flow into each column
  std::vector<double> pot(V, 0.0), dist(V);
  std::vector<std::size_t> parent(V);
  std::vector<char> done(V);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
  long long remaining = static_cast<long long>(n) * static_cast<long long>(m);
  while (remaining > 0) {
    std::fill(dist.begin(), dist.end(), inf);
    std::fill(done.begin(), done.end(), 0);
    heap = {};
    for (std::size_t i = 0; i < n; ++i)
      if (supply[i] > 0) {
        dist[i] = 0;
        parent[i] = V;
        heap.emplace(0.0, i);
      }
    std::size_t target = V;
    while (!heap.empty()) {
      const auto [d, u] = heap.top();
      heap.pop();
      if (done[u] || d > dist[u]) continue;
      done[u] = 1;
      if (u >= n && demand[u - n] > 0) {
        target = u;
        break;
      }
      const auto relax = [&](std::size_t v, double reduced) {
        const double nd = d + std::max(0.0, reduced);
        if (nd < dist[v]) {
          dist[v] = nd;
          parent[v] = u;
          heap.emplace(nd, v);
        }
      };
      if (u < n) {
        for (std::size_t j = 0; j < m; ++j)
          if (!done[n + j]) relax(n + j, cost(u, j) + pot[u] - pot[n + j]);
      } else {
        for (std::size_t i : carriers[u - n])
          if (!done[i]) relax(i, -cost(i, u - n) + pot[u] - pot[i]);
      }
    }
    if (target == V) throw NumericError("transport_uniform: no augmenting path");
    const double reach = dist[target];
    for (std::size_t v = 0; v < V; ++v) pot[v] += std::min(dist[v], reach);

    long long delta = demand[target - n];
    std::size_t v = target;
    while (parent[v] != V) {
      const std::size_t u = parent[v];
      if (u >= n) delta = std::min(delta, flow[v * m + (u - n)]);
      v = u;
    }
    delta = std::min(delta, supply[v]);
    supply[v] -= delta;
    demand[target - n] -= delta;
    remaining -= delta;
    v = target;
    while (parent[v] != V) {
      const std::size_t u = parent[v];
      if (u < n) {
        auto& f = flow[u * m + (v - n)];
        if (f == 0) carriers[v - n].push_back(u);
        f += delta;
      } else {
        auto& f = flow[v * m + (u - n)];
        f -= delta;
        if (f == 0) {
          auto& list = carriers[u - n];
          list.erase(std::find(list.begin(), list.end(), v));
        }
      }
      v = u;
    }
  }
  double total = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      if (flow[i * m + j] != 0) total += static_cast<double>(flow[i * m + j]) * cost(i, j);
  return total / (static_cast<double>(n) * static_cast<double>(m));
}

// Entropic OT between uniform marginals (log-domain Sinkhorn). Returns the
// transport cost <P, C> of the regularized plan.
inline double sinkhorn_cost(const Eigen::MatrixXd& C, double eps_rel = 2e-3, std::size_t max_iter = 5000,
                            double tol = 1e-9) {
  const auto n = C.rows(), m = C.cols();
  const double eps = eps_rel * std::max(C.maxCoeff(), 1e-300);
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Vec f = Vec::Zero(n), g = Vec::Zero(m);
  auto lse_row = [&](Eigen::Index i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < m; ++j) mx = std::max(mx, (g(j) - C(i, j)) / eps);
    double s = 0;
    for (Eigen::Index j = 0; j < m; ++j) s += std::exp((g(j) - C(i, j)) / eps - mx);
    return mx + std::log(s);
  };
  auto lse_col = [&](Eigen::Index j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) mx = std::max(mx, (f(i) - C(i, j)) / eps);
    double s = 0;
    for (Eigen::Index i = 0; i < n; ++i) s += std::exp((f(i) - C(i, j)) / eps - mx);
    return mx + std::log(s);
  };
  for (std::size_t it = 0; it < max_iter; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) f(i) = eps * (log_a - lse_row(i));
    double err = 0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double gj = eps * (log_b - lse_col(j));
      err = std::max(err, std::abs(gj - g(j)));
      g(j) = gj;
    }
    if (err < tol * std::max(1.0, C.maxCoeff())) break;
  }
  double cost = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) cost += std::exp((f(i) + g(j) - C(i, j)) / eps) * C(i, j);
  return cost;
}

// Ground cost: Euclidean distance between concatenated (position, feature) rows.
inline Eigen::MatrixXd ground_cost(const PointCloud& a, const PointCloud& b) {
  const auto n = a.positions.rows(), m = b.positions.rows();
  Eigen::MatrixXd C(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      C(i, j) = std::sqrt((a.positions.row(i) - b.positions.row(j)).squaredNorm() +
                          (a.features.row(i) - b.features.row(j)).squaredNorm());
  return C;
}

enum class WdMethod { automatic, exact, entropic };

inline constexpr std::size_t kExactWdLimit = 512;

// 1-Wasserstein distance between equally weighted point sets, normalized by n.
// Unequal sizes compare the uniform measures 1/n and 1/m.
inline double wasserstein_distance(const PointCloud& a, const PointCloud& b, WdMethod method = WdMethod::automatic) {
  a.validate();
  b.validate();
  if (a.feature_dim() != b.feature_dim()) throw InvalidArgument("wasserstein_distance: feature dimensions differ");
  if (a.size() != b.size()) {
    const bool exact = method == WdMethod::exact ||
                       (method == WdMethod::automatic && std::max(a.size(), b.size()) <= kExactWdLimit);
    return exact ? transport_uniform(ground_cost(a, b)) : sinkhorn_cost(ground_cost(a, b));
  }
  const auto n = static_cast<double>(a.size());
  const Eigen::MatrixXd C = ground_cost(a, b);
  const bool exact = method == WdMethod::exact || (method == WdMethod::automatic && a.size() <= kExactWdLimit);
  if (exact) return solve_assignment(C).cost / n;
  return sinkhorn_cost(C);
}

// ---------------------------------------------------------------------------
// STRIP

template <class Scalar>
double prediction_entropy(const ClassifierParams<Scalar>& params, const PointCloud& cloud) {
  const VecX<Scalar> p = softmax(forward(params, cloud).logits);
  double h = 0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    const auto pk = static_cast<double>(p(k));
    if (pk > 0) h -= pk * std::log(pk);
  }
  return h;
}

// Half-and-half superimposition: floor(n/2) FPS points of the suspect plus
// n - floor(n/2) FPS points of a benign cloud, FPS starts drawn from rng.
inline PointCloud superimpose(const PointCloud& suspect, const PointCloud& benign, Rng& rng) {
  const std::size_t n = suspect.size();
  const std::size_t from_suspect = std::max<std::size_t>(1, n / 2);
  const std::size_t from_benign = std::max<std::size_t>(1, n - from_suspect);
  const auto a_idx = fps_select(suspect, from_suspect, uniform_index(rng, suspect.size()));
  const PointCloud b_src = benign.size() >= from_benign ? benign : resample(benign, from_benign, rng());
  const auto b_idx = fps_select(b_src, from_benign, uniform_index(rng, b_src.size()));
  const PointCloud a = suspect.select(a_idx);
  const PointCloud b = b_src.select(b_idx);
  PointCloud out(Positions(a.positions.rows() + b.positions.rows(), 3),
                 Features(a.positions.rows() + b.positions.rows(), suspect.features.cols()));
  out.positions << a.positions, b.positions;
  out.features << a.features, b.features;
  return out;
}

// Mean prediction entropy over `overlays` superimpositions; low means suspicious.
template <class Scalar>
double strip_score(const ClassifierParams<Scalar>& params, const PointCloud& suspect,
                   std::span<const PointCloud> benign_pool, std::size_t overlays, Rng& rng) {
  if (overlays < 1) throw InvalidArgument("strip_score: overlays must be >= 1");
  if (benign_pool.empty()) throw InvalidArgument("strip_score: empty benign pool");
  double total = 0;
  for (std::size_t o = 0; o < overlays; ++o) {
    const auto& benign = benign_pool[uniform_index(rng, benign_pool.size())];
    total += prediction_entropy(params, superimpose(suspect, benign, rng));
  }
  return total / static_cast<double>(overlays);
}

// ---------------------------------------------------------------------------
// Spectral signatures

// |<latent_i - mean, v>| with v the top right singular vector of the centered
// latent matrix (rows = samples).
inline std::vector<double> spectral_scores_from_latents(const Eigen::MatrixXd& latents) {
  if (latents.rows() < 2) throw InvalidArgument("spectral_scores: need >= 2 samples");
  const Eigen::MatrixXd centered = latents.rowwise() - latents.colwise().mean();
  std::vector<double> out(static_cast<std::size_t>(latents.rows()), 0.0);
  if (centered.squaredNorm() == 0) return out;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Vec v = svd.matrixV().col(0);
  const Vec proj = centered * v;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(proj(static_cast<Eigen::Index>(i)));
  return out;
}

template <class Scalar>
Eigen::MatrixXd latent_matrix(const ClassifierParams<Scalar>& params, std::span<const PointCloud> clouds) {
  Eigen::MatrixXd L(static_cast<Eigen::Index>(clouds.size()), params.h());
  for (std::size_t i = 0; i < clouds.size(); ++i)
    L.row(static_cast<Eigen::Index>(i)) = forward(params, clouds[i]).latent.template cast<double>().transpose();
  return L;
}

template <class Scalar>
std::vector<double> spectral_scores(const ClassifierParams<Scalar>& params, std::span<const PointCloud> clouds) {
  return spectral_scores_from_latents(latent_matrix(params, clouds));
}

// ---------------------------------------------------------------------------
// Adaptive defense: one epsilon ~ N(0, sigma^2 I_c) per cloud added to every
// point's features, then re-guarded. Positions are untouched.

inline PointCloud adaptive_noise(const PointCloud& cloud, double sigma, const GuardMode& guard, Rng& rng) {
  if (!(sigma >= 0)) throw InvalidArgument("adaptive_noise: sigma must be >= 0");
  PointCloud out = cloud;
  Eigen::RowVectorXd eps = Eigen::RowVectorXd::Zero(cloud.features.cols());
  if (sigma > 0) {
    std::normal_distribution<double> g(0.0, sigma);
    for (Eigen::Index k = 0; k < eps.size(); ++k) eps(k) = g(rng);
  }
  for (Eigen::Index i = 0; i < out.features.rows(); ++i) {
    out.features.row(i) += eps;
    apply_guard_inplace(out.features.row(i), guard);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct ThresholdRule {
  // STRIP flags the lowest scores, spectral signatures the highest.
  bool low_is_suspicious = false;
  double fraction = 0.15;
};

struct DetectionReport {
  std::vector<double> scores;
  std::vector<bool> poisoned;
  ThresholdRule rule;
  double threshold = 0;
  std::vector<std::size_t> flagged;
  double auc = 0.5;
  double mean_poisoned = 0;
  double mean_clean = 0;
};

// Probability that a random poisoned sample looks more suspicious than a
// random clean one (ties count half). 0.5 when either class is empty.
inline double detection_auc(const std::vector<double>& scores, const std::vector<bool>& poisoned,
                            bool low_is_suspicious) {
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < scores.size(); ++i)
    (poisoned[i] ? pos : neg).push_back(low_is_suspicious ? -scores[i] : scores[i]);
  if (pos.empty() || neg.empty()) return 0.5;
  // Rank-sum with midranks for ties.
  std::vector<std::pair<double, bool>> all;
  for (double v : pos) all.emplace_back(v, true);
  for (double v : neg) all.emplace_back(v, false);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t t = i; t < j; ++t)
      if (all[t].second) rank_sum += mid;
    i = j;
  }
  const double np = static_cast<double>(pos.size()), nn = static_cast<double>(neg.size());
  return (rank_sum - np * (np + 1) / 2) / (np * nn);
}

inline DetectionReport detection_report(std::vector<double> scores, std::vector<bool> poisoned, ThresholdRule rule) {
  if (scores.size() != poisoned.size()) throw InvalidArgument("detection_report: scores and flags differ in length");
  if (!(rule.fraction >= 0 && rule.fraction <= 1)) throw InvalidArgument("detection_report: fraction must lie in [0, 1]");
  for (double s : scores)
    if (!std::isfinite(s)) throw InvalidArgument("detection_report: non-finite score");
  DetectionReport r;
  r.rule = rule;
  r.auc = detection_auc(scores, poisoned, rule.low_is_suspicious);
  const std::size_t n = scores.size();
  // Tolerance keeps e.g. 0.15 * 20 from rounding up to 4.
  const auto count = std::min(n, static_cast<std::size_t>(std::ceil(rule.fraction * static_cast<double>(n) - 1e-9)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return rule.low_is_suspicious ? scores[a] < scores[b] : scores[a] > scores[b];
  });
  r.flagged.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(r.flagged.begin(), r.flagged.end());
  r.threshold = count ? scores[order[count - 1]] : (rule.low_is_suspicious ? -std::numeric_limits<double>::infinity()
                                                                            : std::numeric_limits<double>::infinity());
  std::size_t np = 0, nc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (poisoned[i]) {
      r.mean_poisoned += scores[i];
      ++np;
    } else {
      r.mean_clean += scores[i];
      ++nc;
    }
  }
  if (np) r.mean_poisoned /= static_cast<double>(np);
  if (nc) r.mean_clean /= static_cast<double>(nc);
  r.scores = std::move(scores);
  r.poisoned = std::move(poisoned);
  return r;
}

inline nlohmann::json to_json(const DetectionReport& r) {
  nlohmann::json j;
  j["scores"] = r.scores;
  j["poisoned"] = r.poisoned;
  j["threshold"] = r.threshold;
  j["flagged"] = r.flagged;
  j["auc"] = r.auc;
  j["mean_poisoned"] = r.mean_poisoned;
  j["mean_clean"] = r.mean_clean;
  j["rule"] = {{"low_is_suspicious", r.rule.low_is_suspicious}, {"fraction", r.rule.fraction}};
  return j;
}

inline std::string to_csv(const DetectionReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "index,score,poisoned,flagged\n";
  std::vector<char> flag(r.scores.size(), 0);
  for (auto i : r.flagged) flag[i] = 1;
  for (std::size_t i = 0; i < r.scores.size(); ++i)
    os << i << ',' << r.scores[i] << ',' << (r.poisoned[i] ? 1 : 0) << ',' << int(flag[i]) << '\n';
  return os.str();
}

}  // namespace pcb
