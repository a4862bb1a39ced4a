#pragma once

// Bayesian-optimization trigger search: a squared-exponential Gaussian process
// surrogate, Expected Improvement (minimization form), and the poisoned-loss
// objective evaluated with a briefly retrained surrogate classifier.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcb/model.hpp"
#include "pcb/poisoner.hpp"

namespace pcb {

struct Observation {
  Vec s;
  double value = 0;
};

struct KernelHyper {
  Vec lengthscale;           // per dimension
  double signal_var = 1.0;   // sigma_f^2
  double noise_var = 1e-6;   // sigma_n^2
  double prior_mean = 0.0;
};

struct GPState {
  std::vector<Observation> observations;
  KernelHyper hyper;
  // Jitter actually used after escalation.
  double jitter = 0;
  Eigen::MatrixXd L;  // lower Cholesky factor of K + jitter I
  Vec alpha;          // (K + jitter I)^-1 (y - prior_mean)
};

inline double se_kernel(const Vec& a, const Vec& b, const KernelHyper& hp) {
  double r2 = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = (a(i) - b(i)) / hp.lengthscale(i);
    r2 += d * d;
  }
  return hp.signal_var * std::exp(-0.5 * r2);
}

inline Eigen::MatrixXd gram_matrix(const std::vector<Observation>& obs, const KernelHyper& hp) {
  const auto n = static_cast<Eigen::Index>(obs.size());
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = se_kernel(obs[i].s, obs[j].s, hp);
  return K;
}

// Default hyperparameters: shared length-scale 0.2 x box width, signal
// variance = sample variance of the values (1 if degenerate), prior mean =
// sample mean.
inline KernelHyper default_hyper(const std::vector<Observation>& obs, const Vec& lo, const Vec& hi) {
  KernelHyper hp;
  hp.lengthscale = 0.2 * (hi - lo);
  for (Eigen::Index i = 0; i < hp.lengthscale.size(); ++i)
    if (!(hp.lengthscale(i) > 0)) hp.lengthscale(i) = 1.0;
  double mean = 0;
  for (const auto& o : obs) mean += o.value;
  mean /= static_cast<double>(obs.size());
  double var = 0;
  for (const auto& o : obs) var += (o.value - mean) * (o.value - mean);
  var /= static_cast<double>(obs.size());
  hp.prior_mean = mean;
  hp.signal_var = var > 0 ? var : 1.0;
  hp.noise_var = 1e-6;
  return hp;
}

// Caches the Cholesky factor of K + sigma_n^2 I, escalating jitter tenfold up
// to six times when the factorization fails.
inline GPState gp_fit(std::vector<Observation> observations, const KernelHyper& hyper) {
  if (observations.empty()) throw InvalidArgument("gp_fit: need at least one observation");
  for (const auto& o : observations)
    if (!std::isfinite(o.value) || !o.s.allFinite()) throw InvalidArgument("gp_fit: non-finite observation");
  GPState st;
  st.observations = std::move(observations);
  st.hyper = hyper;
  const Eigen::MatrixXd K = gram_matrix(st.observations, hyper);
  const auto n = K.rows();
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = st.observations[static_cast<std::size_t>(i)].value - hyper.prior_mean;

  double jitter = hyper.noise_var > 0 ? hyper.noise_var : 1e-10 * hyper.signal_var;
  for (int attempt = 0; attempt < 7; ++attempt, jitter *= 10) {
    Eigen::LLT<Eigen::MatrixXd> llt(K + jitter * Eigen::MatrixXd::Identity(n, n));
    if (llt.info() != Eigen::Success) continue;
    st.L = llt.matrixL();
    st.alpha = llt.solve(y);
    if (!st.alpha.allFinite()) continue;
    st.jitter = jitter;
    return st;
  }
  throw NumericError("gp_fit: Gram matrix not positive definite after jitter escalation");
}

inline double log_marginal_likelihood(const GPState& st) {
  double yKy = 0;
  for (Eigen::Index i = 0; i < st.alpha.size(); ++i)
    yKy += (st.observations[static_cast<std::size_t>(i)].value - st.hyper.prior_mean) * st.alpha(i);
  const double logdet = 2.0 * st.L.diagonal().array().log().sum();
  return -0.5 * yKy - 0.5 * logdet - 0.5 * static_cast<double>(st.alpha.size()) * std::log(2 * std::numbers::pi);
}

// Length-scale chosen from a small log grid by marginal likelihood.
inline GPState gp_fit_ml(std::vector<Observation> observations, const Vec& lo, const Vec& hi) {
  const KernelHyper base = default_hyper(observations, lo, hi);
  std::optional<GPState> best;
  double best_lml = -std::numeric_limits<double>::infinity();
  for (double f : {0.25, 0.5, 1.0, 2.0, 4.0}) {
    KernelHyper hp = base;
    hp.lengthscale *= f;
    GPState st = gp_fit(observations, hp);
    const double lml = log_marginal_likelihood(st);
    if (lml > best_lml) {
      best_lml = lml;
      best = std::move(st);
    }
  }
  return *best;
}

struct Posterior {
  double mean = 0;
  double variance = 0;
};

inline Posterior gp_posterior(const GPState& st, const Vec& s) {
  const auto n = static_cast<Eigen::Index>(st.observations.size());
  Vec k(n);
  for (Eigen::Index i = 0; i < n; ++i) k(i) = se_kernel(st.observations[static_cast<std::size_t>(i)].s, s, st.hyper);
  Posterior p;
  p.mean = st.hyper.prior_mean + k.dot(st.alpha);
  const Vec v = st.L.triangularView<Eigen::Lower>().solve(k);
  p.variance = std::max(0.0, st.hyper.signal_var - v.squaredNorm());
  return p;
}

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2 * std::numbers::pi); }
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// EI for minimization: E[max(best - f, 0)].
inline double expected_improvement(double mean, double variance, double best) {
  const double sigma = std::sqrt(std::max(variance, 0.0));
  const double gain = best - mean;
  if (!(sigma > 0)) return std::max(gain, 0.0);
  const double z = gain / sigma;
  return std::max(0.0, gain * normal_cdf(z) + sigma * normal_pdf(z));
}

inline double expected_improvement(const GPState& st, const Vec& s, double best) {
  const auto p = gp_posterior(st, s);
  return expected_improvement(p.mean, p.variance, best);
}

// ---------------------------------------------------------------------------
// Search loop

struct BOConfig {
  Vec lo, hi;                     // box S
  std::size_t init_count = 4;     // random initial design size
  std::size_t iterations = 15;    // T
  std::size_t candidates = 256;   // acquisition multi-start pool
  std::size_t refine_starts = 4;  // best candidates refined coordinatewise
  bool fit_hyper = false;         // log-grid marginal-likelihood refinement
  std::uint64_t seed = 0;

  std::size_t dim() const { return static_cast<std::size_t>(lo.size()); }
  void validate() const {
    if (lo.size() < 1 || lo.size() != hi.size()) throw InvalidArgument("bo: bad bounds");
    for (Eigen::Index i = 0; i < lo.size(); ++i)
      if (!(lo(i) <= hi(i))) throw InvalidArgument("bo: bounds need lo <= hi");
    if (init_count < 2) throw InvalidArgument("bo: init_count must be >= 2");
    if (candidates < 1) throw InvalidArgument("bo: candidates must be >= 1");
  }
};

struct TraceEntry {
  std::size_t iteration = 0;
  Vec s;
  double objective = 0;
  double penalty = 0;
  double running_best = 0;
};

struct SearchResult {
  Vec best_s;
  double best_value = 0;
  std::vector<TraceEntry> trace;
};

// Objective errors abort the search; the trace up to the failure is kept here.
struct SearchAborted : NumericError {
  SearchAborted(const std::string& what, std::vector<TraceEntry> partial)
      : NumericError("search aborted: " + what), trace(std::move(partial)) {}
  std::vector<TraceEntry> trace;
};

struct ObjectiveValue {
  double total = 0;
  double penalty = 0;
};

using ObjectiveFn = std::function<ObjectiveValue(const Vec&)>;

namespace detail {

inline Vec clamp_box(Vec s, const Vec& lo, const Vec& hi) {
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i) = std::min(std::max(s(i), lo(i)), hi(i));
  return s;
}

// argmax_s EI(s): seeded uniform candidates, then coordinatewise pattern
// search from the best few.
inline Vec maximize_ei(const GPState& st, double best, const BOConfig& cfg, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(cfg.dim());
  std::vector<std::pair<double, Vec>> pool;
  pool.reserve(cfg.candidates);
  for (std::size_t i = 0; i < cfg.candidates; ++i) {
    Vec s(d);
    for (Eigen::Index k = 0; k < d; ++k) s(k) = uniform(rng, cfg.lo(k), cfg.hi(k));
    pool.emplace_back(expected_improvement(st, s, best), std::move(s));
  }
  std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  const std::size_t starts = std::min(cfg.refine_starts, pool.size());
  double best_ei = pool.front().first;
  Vec best_s = pool.front().second;
  for (std::size_t r = 0; r < starts; ++r) {
    Vec s = pool[r].second;
    double e = pool[r].first;
    Vec step = 0.05 * (cfg.hi - cfg.lo);
    for (int round = 0; round < 40 && step.maxCoeff() > 1e-6 * std::max(1.0, (cfg.hi - cfg.lo).maxCoeff()); ++round) {
      bool moved = false;
      for (Eigen::Index k = 0; k < d; ++k)
        for (double dir : {1.0, -1.0}) {
          Vec t = s;
          t(k) += dir * step(k);
          t = clamp_box(std::move(t), cfg.lo, cfg.hi);
          const double et = expected_improvement(st, t, best);
          if (et > e) {
            e = et;
            s = std::move(t);
            moved = true;
          }
        }
      if (!moved) step *= 0.5;
    }
    if (e > best_ei) {
      best_ei = e;
      best_s = s;
    }
  }
  return best_s;
}

}  // namespace detail

// init_count uniform draws in S, then T EI-driven evaluations; returns the
// argmin over everything evaluated.
inline SearchResult search_trigger(const BOConfig& cfg, const ObjectiveFn& objective) {
  cfg.validate();
  const auto d = static_cast<Eigen::Index>(cfg.dim());
  Rng rng = make_rng(cfg.seed, {0xB0});
  SearchResult res;
  std::vector<Observation> obs;
  double running = std::numeric_limits<double>::infinity();

  auto evaluate = [&](const Vec& s) {
    ObjectiveValue v;
    try {
      v = objective(s);
    } catch (const std::exception& e) {
      throw SearchAborted(e.what(), res.trace);
    }
    if (!std::isfinite(v.total)) throw SearchAborted("non-finite objective value", res.trace);
    if (v.total < running) {
      running = v.total;
      res.best_s = s;
      res.best_value = v.total;
    }
    res.trace.push_back({res.trace.size(), s, v.total, v.penalty, running});
    obs.push_back({s, v.total});
  };

  for (std::size_t i = 0; i < cfg.init_count; ++i) {
    Vec s(d);
    for (Eigen::Index k = 0; k < d; ++k) s(k) = uniform(rng, cfg.lo(k), cfg.hi(k));
    evaluate(s);
  }
  for (std::size_t t = 0; t < cfg.iterations; ++t) {
    const GPState gp = cfg.fit_hyper ? gp_fit_ml(obs, cfg.lo, cfg.hi) : gp_fit(obs, default_hyper(obs, cfg.lo, cfg.hi));
    evaluate(detail::maximize_ei(gp, running, cfg, rng));
  }
  return res;
}

inline std::string trace_csv(const SearchResult& res) {
  std::ostringstream os;
  os.precision(17);
  const auto d = res.trace.empty() ? 0 : res.trace.front().s.size();
  os << "iteration";
  for (Eigen::Index k = 0; k < d; ++k) os << ",s" << k;
  os << ",objective,penalty,running_best\n";
  for (const auto& e : res.trace) {
    os << e.iteration;
    for (Eigen::Index k = 0; k < d; ++k) os << ',' << e.s(k);
    os << ',' << e.objective << ',' << e.penalty << ',' << e.running_best << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Poisoned-loss objective: O(s) = mean CE(g'(X^_i^s), y_t) over the
// poisoned clouds + lambda * ||s||_1.

struct SurrogateConfig {
  PoisonSpec poison;        // trigger.shift is replaced by the candidate s
  std::uint64_t poison_seed = 0;
  TrainConfig train;        // train.epochs is E_s
  Params warm_start;        // clean-pretrained surrogate
  double lambda = 0.1;
  std::size_t eval_size = 0;  // training subset size (0 = whole dataset)
};

inline Dataset take_prefix(const Dataset& d, std::size_t count) {
  if (count == 0 || count >= d.size()) return d;
  Dataset out = d;
  out.clouds.resize(count);
  out.poison.reset();
  return out;
}

inline ObjectiveValue objective(const Vec& s, const Dataset& dataset, const SurrogateConfig& cfg) {
  PoisonSpec spec = cfg.poison;
  spec.trigger.shift = s;
  spec.trigger.validate();
  const Dataset base = take_prefix(dataset, cfg.eval_size);
  const auto poisoned = poison_dataset(base, spec, cfg.poison_seed);
  const auto trained = train(cfg.warm_start, poisoned.dataset, cfg.train);
  double loss = 0;
  for (auto i : poisoned.indices) {
    const auto& lc = poisoned.dataset.clouds[i];
    loss += static_cast<double>(detail::cross_entropy(forward(trained.params, lc.cloud).logits, lc.label));
  }
  if (!poisoned.indices.empty()) loss /= static_cast<double>(poisoned.indices.size());
  const double penalty = cfg.lambda * s.lpNorm<1>();
  return {loss + penalty, penalty};
}

inline SearchResult search_trigger(const BOConfig& cfg, const Dataset& dataset, const SurrogateConfig& surrogate) {
  return search_trigger(cfg, [&](const Vec& s) { return objective(s, dataset, surrogate); });
}

}  // namespace pcb
