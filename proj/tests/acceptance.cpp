// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Thresholds are fixed here and nowhere else.

#include <cstdio>
#include <ctime>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "oracles.hpp"
#include "pcb/bo.hpp"
#include "pcb/dataset.hpp"
#include "pcb/defense.hpp"
#include "pcb/model.hpp"
#include "pcb/poisoner.hpp"
#include "pcb/preprocess.hpp"
#include "test_helpers.hpp"

namespace {

using namespace pcb;

constexpr std::uint64_t kDataSeed = 1, kPoisonSeed = 3, kInitSeed = 11, kTrainSeed = 5, kPipelineSeed = 9;
constexpr int kHidden = 64;
constexpr int kTarget = 0;

struct Outcome {
  bool pass;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const Outcome& o) {
  std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
  std::fflush(stdout);
  failures += !o.pass;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double cpu_seconds() { return static_cast<double>(std::clock()) / CLOCKS_PER_SEC; }

// Shared experiment state, trained once and reused across criteria.
struct Lab {
  SyntheticData data = gen_synthetic(default_synthetic_spec(), kDataSeed);
  PoisonSpec attack;
  BallTrigger ball;  // count 10, just outside the unit sphere

  Lab() {
    attack.trigger = Trigger::in_box(Vec::Constant(1, 0.5), 0.0, 1.0);
    attack.w = 192;
    attack.rate = 0.05;
    attack.target = kTarget;
    ball.center = Vec3(1.6, 0.0, 0.0);
    ball.radius = 0.05;
    ball.count = 10;
  }

  Params fit(const Dataset& d, const Pipeline& pipeline = {}) const {
    TrainConfig cfg;
    cfg.seed = kTrainSeed;
    cfg.pipeline = pipeline;
    return train(init_params(1, 4, kHidden, kInitSeed), d, cfg).params;
  }

  Dataset poisoned(const PoisonSpec& spec) const { return poison_dataset(data.train, spec, kPoisonSeed).dataset; }
};

// ---------------------------------------------------------------------------

double clean_acc = 0;
Params attack_model;

Outcome clean_learnability(const Lab& lab) {
  const double t0 = cpu_seconds();
  const auto p = lab.fit(lab.data.train);
  const double t = cpu_seconds() - t0;
  clean_acc = evaluate_acc(p, lab.data.test);
  return {clean_acc >= 0.90 && t <= 300.0, fmt("ACC %.3f (>= 0.90), training %.1f CPU-s (<= 300)", clean_acc, t)};
}

Outcome attack_effectiveness(const Lab& lab) {
  attack_model = lab.fit(lab.poisoned(lab.attack));
  const double acc = evaluate_acc(attack_model, lab.data.test);
  const double asr = evaluate_asr(attack_model, lab.data.test, lab.attack);
  return {asr >= 0.90 && clean_acc - acc <= 0.03,
          fmt("s=0.5 w=192 eta=0.05: ASR %.3f (>= 0.90), ACC %.3f, drop %.3f (<= 0.03)", asr, acc, clean_acc - acc)};
}

Outcome preprocessing_robustness(const Lab& lab) {
  const double t0 = cpu_seconds();
  const double base = evaluate_asr(attack_model, lab.data.test, lab.attack);
  const auto full = standard_pipeline_prefix(7, kPipelineSeed);
  const auto p_full = lab.fit(lab.poisoned(lab.attack), full);
  const double asr_full = evaluate_asr(p_full, lab.data.test, lab.attack, {}, inference_pipeline(full));

  const auto sor = standard_pipeline_prefix(1, kPipelineSeed);
  const auto ball_set = poison_dataset_ball(lab.data.train, lab.ball, kTarget, 0.05, kPoisonSeed).dataset;
  const auto p_ball = lab.fit(ball_set, sor);
  const double asr_ball = evaluate_asr_ball(p_ball, lab.data.test, lab.ball, kTarget, 99, inference_pipeline(sor));
  const double t = cpu_seconds() - t0;
  const double delta = std::abs(asr_full - base);
  return {delta <= 0.05 && asr_ball < 0.15 && t <= 1200.0,
          fmt("shift-trigger ASR %.3f -> %.3f under 7 ops (|d| %.3f <= 0.05); ball ASR under SOR %.3f (< 0.15); %.0f CPU-s "
              "(<= 1200)",
              base, asr_full, delta, asr_ball, t)};
}

Outcome feature_preservation() {
  const auto ops = standard_defense_ops();
  std::mt19937_64 gen(404);
  std::size_t bad = 0, shrunk = 0;
  for (std::size_t i = 0; i < 1000; ++i) {
    const std::size_t n = 40 + gen() % 260;
    const int c = i % 2 ? 3 : 1;
    auto cloud = test::random_cloud(n, c, 1000 + i);
    PoisonSpec ps;
    ps.trigger = Trigger::in_box(Vec::Constant(c, 0.3), 0.0, 1.0);
    ps.w = n / 2;
    cloud = implant_trigger(cloud, ps, i);
    Rng rng(i);
    const auto out = apply_op(cloud, ops[i % ops.size()], rng);
    bad += !test::features_preserved(cloud, out);
    shrunk += out.size() < cloud.size();
  }
  return {bad == 0, fmt("%zu/1000 pairs violate (0 allowed); %zu pairs dropped points", bad, shrunk)};
}

Outcome sor_oracle() {
  std::mt19937_64 gen(505);
  std::size_t mismatch = 0, removed = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t n = 31 + gen() % 482;
    auto cloud = test::random_cloud(n, 1, 2000 + i);
    for (std::size_t k = 0; k < n / 40; ++k) cloud.positions.row(static_cast<Eigen::Index>(gen() % n)) *= 4.0;
    const auto keep = test::sor_oracle_keep(cloud, 30, 2.0);
    mismatch += !(sor_filter(cloud, 30, 2.0) == cloud.select(keep));
    removed += n - keep.size();
  }
  return {mismatch == 0, fmt("%zu/200 clouds differ from the brute-force oracle; %zu points removed in total", mismatch,
                             removed)};
}

Outcome fps_property() {
  std::mt19937_64 gen(606);
  std::size_t bad = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const std::size_t n = 1 + gen() % 64;
    const std::size_t w = 1 + gen() % n;
    const auto cloud = test::random_cloud(n, 1, 3000 + i);
    const auto sel = fps_select(cloud, w, gen() % n);
    bad += !test::satisfies_max_min(cloud, sel);
  }
  return {bad == 0, fmt("%zu/200 selections break the max-min rule (0 allowed)", bad)};
}

Outcome gradient_correctness() {
  double worst = 0;
  std::size_t routing_bad = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto params = init_params<double>(1, 2, 4, seed);
    std::vector<LabeledCloud> batch{{test::random_cloud(8, 1, seed * 2), 0, false},
                                    {test::random_cloud(8, 1, seed * 2 + 1), 1, false}};
    worst = std::max(worst, test::max_fd_error(params, batch));
    routing_bad += !test::gradient_routing_exact(params, batch[0].cloud);
  }
  return {worst <= 1e-4 && routing_bad == 0,
          fmt("max relative FD error %.2e (<= 1e-4); %zu/10 routing violations", worst, routing_bad)};
}

Outcome gp_ei_bo() {
  double worst = 0;
  std::mt19937_64 gen(707);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t trial = 0; trial < 20; ++trial) {
    const int dim = 1 + static_cast<int>(trial % 3);
    std::vector<Observation> obs;
    for (std::size_t i = 0; i < 1 + trial; ++i) {
      Vec s(dim);
      for (int k = 0; k < dim; ++k) s(k) = u(gen);
      obs.push_back({s, std::cos(4 * s.sum()) + 0.2 * u(gen)});
    }
    const auto hp = default_hyper(obs, Vec::Zero(dim), Vec::Ones(dim));
    const auto st = gp_fit(obs, hp);
    for (int q = 0; q < 10; ++q) {
      Vec s(dim);
      for (int k = 0; k < dim; ++k) s(k) = u(gen);
      const auto got = gp_posterior(st, s);
      const auto want = test::dense_posterior(obs, hp, st.jitter, s);
      worst = std::max({worst, std::abs(got.mean - want.mean), std::abs(got.variance - want.variance)});
    }
  }
  const double ei_zero = expected_improvement(1.0, 0.0, 1.0);
  const double ei_phi = expected_improvement(0.0, 1.0, 0.0);
  const bool ei_ok = ei_zero == 0.0 && std::abs(ei_phi - 0.3989422804014327) <= 1e-6;

  std::size_t converged = 0, evals = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    BOConfig cfg;
    cfg.lo = Vec::Zero(1);
    cfg.hi = Vec::Ones(1);
    cfg.seed = seed;
    const auto res = search_trigger(cfg, [](const Vec& s) { return ObjectiveValue{(s(0) - 0.3) * (s(0) - 0.3), 0.0}; });
    converged += std::abs(res.best_s(0) - 0.3) <= 0.05 && res.trace.size() <= 19;
    evals = std::max(evals, res.trace.size());
  }
  return {worst <= 1e-8 && ei_ok && converged == 10,
          fmt("posterior max |diff| %.1e (<= 1e-8); EI(0 var) %.1g, EI(phi(0)) %.9f; BO %zu/10 within 0.05 using %zu "
              "evaluations (<= 19)",
              worst, ei_zero, ei_phi, converged, evals)};
}

Outcome wd_properties() {
  std::mt19937_64 gen(808);
  double worst_sym = 0, worst_tri = 0, worst_id = 0, worst_bound = -1;
  for (std::size_t i = 0; i < 100; ++i) {
    const std::size_t n = 2 + gen() % 15;
    const auto a = test::random_cloud(n, 1, 4000 + i), b = test::random_cloud(n, 1, 5000 + i),
               c = test::random_cloud(n, 1, 6000 + i);
    const auto wd = [](const PointCloud& x, const PointCloud& y) { return wasserstein_distance(x, y, WdMethod::exact); };
    worst_id = std::max(worst_id, wd(a, a));
    worst_sym = std::max(worst_sym, std::abs(wd(a, b) - wd(b, a)));
    worst_tri = std::max(worst_tri, wd(a, b) - wd(a, c) - wd(c, b));

    const std::size_t m = 16 + gen() % 240;
    const auto x = test::random_cloud(m, 2, 7000 + i);
    PoisonSpec ps;
    ps.trigger = Trigger::in_box(Vec::Constant(2, 0.5 * static_cast<double>(gen() % 100) / 100.0), 0.0, 1.0);
    ps.w = 1 + gen() % m;
    const double bound = static_cast<double>(ps.w) / static_cast<double>(m) * ps.trigger.shift.norm();
    worst_bound = std::max(worst_bound, wasserstein_distance(x, implant_trigger(x, ps, i)) - bound);
  }
  double worst_rel = 0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto a = test::random_cloud(128, 1, 8000 + seed), b = test::random_cloud(128, 1, 9000 + seed);
    const double exact = wasserstein_distance(a, b, WdMethod::exact);
    worst_rel = std::max(worst_rel, std::abs(wasserstein_distance(a, b, WdMethod::entropic) - exact) / exact);
  }
  return {worst_id == 0.0 && worst_sym <= 1e-9 && worst_tri <= 1e-6 && worst_bound <= 1e-9 && worst_rel <= 0.05,
          fmt("identity %.1g, symmetry %.1e (<= 1e-9), triangle excess %.1e (<= 1e-6), bound excess %.1e (<= 1e-9), "
              "entropic rel. error %.4f (<= 0.05)",
              worst_id, worst_sym, worst_tri, worst_bound, worst_rel)};
}

Outcome stealth_ordering(const Lab& lab) {
  PoisonSpec small = lab.attack;
  small.trigger = Trigger::in_box(Vec::Constant(1, 0.1), 0.0, 1.0);
  BallTrigger ball = lab.ball;
  ball.count = 30;
  std::size_t wins = 0;
  double sum_shift = 0, sum_ball = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& x = lab.data.train.clouds[i].cloud;
    const double a = wasserstein_distance(x, implant_trigger(x, small, i));
    const double b = wasserstein_distance(x, implant_ball_trigger(x, ball, i));
    wins += a < b;
    sum_shift += a;
    sum_ball += b;
  }
  return {wins >= 190, fmt("s=0.1: shift trigger closer on %zu/200 clouds (>= 190); mean WD %.4f vs ball(30) %.4f", wins,
                           sum_shift / 200, sum_ball / 200)};
}

double strip_auc(const Params& p, const Dataset& test, const std::function<PointCloud(const PointCloud&, std::size_t)>& trig) {
  std::vector<PointCloud> pool;
  for (std::size_t i = 0; i < 40; ++i) pool.push_back(test.clouds[i].cloud);
  std::vector<double> scores;
  std::vector<bool> flags;
  Rng rng(77);
  for (std::size_t i = 40; i < 140; ++i) {
    scores.push_back(strip_score(p, test.clouds[i].cloud, pool, 10, rng));
    flags.push_back(false);
  }
  std::size_t count = 0;
  for (std::size_t i = 40; count < 100 && i < test.size(); ++i) {
    if (test.clouds[i].label == kTarget) continue;
    scores.push_back(strip_score(p, trig(test.clouds[i].cloud, i), pool, 10, rng));
    flags.push_back(true);
    ++count;
  }
  return detection_report(scores, flags, {true, 0.15}).auc;
}

Outcome strip_contrast(const Lab& lab) {
  const double shift_auc = strip_auc(attack_model, lab.data.test,
                                    [&](const PointCloud& c, std::size_t i) { return implant_trigger(c, lab.attack, i); });
  const auto ball_model =
      lab.fit(poison_dataset_ball(lab.data.train, lab.ball, kTarget, 0.05, kPoisonSeed).dataset);
  const double ball_auc = strip_auc(ball_model, lab.data.test, [&](const PointCloud& c, std::size_t i) {
    return implant_ball_trigger(c, lab.ball, i);
  });
  return {shift_auc <= 0.65 && ball_auc >= 0.85,
          fmt("AUC vs shift trigger %.3f (<= 0.65), vs ball %.3f (>= 0.85)", shift_auc, ball_auc)};
}

Outcome ablation_shape(const Lab& lab) {
  const auto asr_for = [&](double rate, std::size_t w) {
    PoisonSpec ps = lab.attack;
    ps.rate = rate;
    ps.w = w;
    if (rate == lab.attack.rate && w == lab.attack.w) return evaluate_asr(attack_model, lab.data.test, ps);
    return evaluate_asr(lab.fit(lab.poisoned(ps)), lab.data.test, ps);
  };
  std::vector<double> by_rate, by_w;
  for (double r : {0.01, 0.02, 0.05, 0.1}) by_rate.push_back(asr_for(r, 192));
  for (std::size_t w : {64, 128, 192, 256}) by_w.push_back(asr_for(0.05, w));
  const double at100 = asr_for(0.05, 100);
  bool monotone = true;
  for (std::size_t k = 1; k < 4; ++k) monotone = monotone && by_rate[k] >= by_rate[k - 1] - 0.03 && by_w[k] >= by_w[k - 1] - 0.03;
  return {monotone && at100 >= 0.70,
          fmt("eta {.01,.02,.05,.1}: %.3f %.3f %.3f %.3f; w {64,128,192,256}: %.3f %.3f %.3f %.3f (non-decreasing "
              "within 0.03); w=100: %.3f (>= 0.70)",
              by_rate[0], by_rate[1], by_rate[2], by_rate[3], by_w[0], by_w[1], by_w[2], by_w[3], at100)};
}

Outcome determinism() {
  const auto a = test::scratch_dir("acceptance_det_a");
  const auto b = test::scratch_dir("acceptance_det_b");
  if (!test::pipeline_run(a) || !test::pipeline_run(b)) return {false, "a pipeline step exited nonzero"};
  const auto fa = test::artifacts(a), fb = test::artifacts(b);
  std::size_t differ = 0;
  for (const auto& [name, bytes] : fa) differ += !fb.count(name) || fb.at(name) != bytes;
  differ += fa.size() != fb.size();
  return {differ == 0 && !fa.empty(),
          fmt("%zu artifacts from gen/poison/train/eval/search/defend, %zu differ (0 allowed)", fa.size(), differ)};
}

}  // namespace

int main() {
  const Lab lab;
  report(1, "clean learnability", clean_learnability(lab));
  report(2, "attack effectiveness", attack_effectiveness(lab));
  report(3, "preprocessing robustness", preprocessing_robustness(lab));
  report(4, "feature preservation", feature_preservation());
  report(5, "SOR oracle equivalence", sor_oracle());
  report(6, "FPS max-min property", fps_property());
  report(7, "gradient correctness", gradient_correctness());
  report(8, "GP/EI/BO correctness", gp_ei_bo());
  report(9, "WD metric properties", wd_properties());
  report(10, "stealth ordering", stealth_ordering(lab));
  report(11, "STRIP contrast", strip_contrast(lab));
  report(12, "ablation shape", ablation_shape(lab));
  report(13, "determinism", determinism());
  std::printf("%d of 13 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
