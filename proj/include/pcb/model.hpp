#pragma once

// Compact PointNet-style classifier: a shared two-layer per-point encoder,
// coordinatewise max-pool, and a two-layer head. Used both as the victim and
// as the surrogate inside trigger search.
//
// Every point is encoded independently with a fixed summation order, so the
// pooled latent (and therefore the logits) are bitwise invariant to point
// order and to point duplication.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pcb/binio.hpp"
#include "pcb/core.hpp"
#include "pcb/dataset.hpp"
#include "pcb/poisoner.hpp"
#include "pcb/preprocess.hpp"

namespace pcb {

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// All weights live in one flat buffer; the accessors map layer views onto it.
template <class Scalar>
class ClassifierParams {
 public:
  using MatMap = Eigen::Map<MatX<Scalar>>;
  using CMatMap = Eigen::Map<const MatX<Scalar>>;
  using VecMap = Eigen::Map<VecX<Scalar>>;
  using CVecMap = Eigen::Map<const VecX<Scalar>>;

  ClassifierParams() = default;
  ClassifierParams(int c, int K, int h) : c_(c), K_(K), h_(h) {
    if (c < 1 || K < 1 || h < 1) throw InvalidArgument("classifier dims must be >= 1");
    data_.assign(total_size(), Scalar(0));
  }

  int c() const { return c_; }
  int K() const { return K_; }
  int h() const { return h_; }
  int in_dim() const { return 3 + c_; }
  int head_dim() const { return std::max(1, h_ / 2); }

  std::size_t size() const { return data_.size(); }
  std::vector<Scalar>& data() { return data_; }
  const std::vector<Scalar>& data() const { return data_; }

  // Encoder layer 1: (3+c) -> h.
  MatMap W1() { return mat(0, h_, in_dim()); }
  VecMap b1() { return vec(off_b1(), h_); }
  // Encoder layer 2: h -> h.
  MatMap W2() { return mat(off_W2(), h_, h_); }
  VecMap b2() { return vec(off_b2(), h_); }
  // Head layer 1: h -> h/2.
  MatMap W3() { return mat(off_W3(), head_dim(), h_); }
  VecMap b3() { return vec(off_b3(), head_dim()); }
  // Head layer 2: h/2 -> K.
  MatMap W4() { return mat(off_W4(), K_, head_dim()); }
  VecMap b4() { return vec(off_b4(), K_); }

  CMatMap W1() const { return cmat(0, h_, in_dim()); }
  CVecMap b1() const { return cvec(off_b1(), h_); }
  CMatMap W2() const { return cmat(off_W2(), h_, h_); }
  CVecMap b2() const { return cvec(off_b2(), h_); }
  CMatMap W3() const { return cmat(off_W3(), head_dim(), h_); }
  CVecMap b3() const { return cvec(off_b3(), head_dim()); }
  CMatMap W4() const { return cmat(off_W4(), K_, head_dim()); }
  CVecMap b4() const { return cvec(off_b4(), K_); }

  // Same dims, all zeros; the shape of a gradient.
  ClassifierParams zeros_like() const { return ClassifierParams(c_, K_, h_); }

  template <class Other>
  ClassifierParams<Other> cast() const {
    ClassifierParams<Other> out(c_, K_, h_);
    std::transform(data_.begin(), data_.end(), out.data().begin(), [](Scalar v) { return static_cast<Other>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](Scalar v) { return std::isfinite(v); });
  }

  bool operator==(const ClassifierParams&) const = default;

  struct Block {
    std::size_t offset, size;
    bool is_bias;
    int fan_in;
  };
  std::vector<Block> blocks() const {
    return {{0, std::size_t(h_) * in_dim(), false, in_dim()},
            {off_b1(), std::size_t(h_), true, in_dim()},
            {off_W2(), std::size_t(h_) * h_, false, h_},
            {off_b2(), std::size_t(h_), true, h_},
            {off_W3(), std::size_t(head_dim()) * h_, false, h_},
            {off_b3(), std::size_t(head_dim()), true, h_},
            {off_W4(), std::size_t(K_) * head_dim(), false, head_dim()},
            {off_b4(), std::size_t(K_), true, head_dim()}};
  }

 private:
  std::size_t off_b1() const { return std::size_t(h_) * in_dim(); }
  std::size_t off_W2() const { return off_b1() + h_; }
  std::size_t off_b2() const { return off_W2() + std::size_t(h_) * h_; }
  std::size_t off_W3() const { return off_b2() + h_; }
  std::size_t off_b3() const { return off_W3() + std::size_t(head_dim()) * h_; }
  std::size_t off_W4() const { return off_b3() + head_dim(); }
  std::size_t off_b4() const { return off_W4() + std::size_t(K_) * head_dim(); }
  std::size_t total_size() const { return off_b4() + K_; }

  MatMap mat(std::size_t off, int r, int c) { return MatMap(data_.data() + off, r, c); }
  VecMap vec(std::size_t off, int n) { return VecMap(data_.data() + off, n); }
  CMatMap cmat(std::size_t off, int r, int c) const { return CMatMap(data_.data() + off, r, c); }
  CVecMap cvec(std::size_t off, int n) const { return CVecMap(data_.data() + off, n); }

  int c_ = 0, K_ = 0, h_ = 0;
  std::vector<Scalar> data_;
};

using Params = ClassifierParams<float>;

// Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases zero.
template <class Scalar = float>
ClassifierParams<Scalar> init_params(int c, int K, int h, std::uint64_t seed) {
  ClassifierParams<Scalar> p(c, K, h);
  Rng rng = make_rng(seed, {0x1417});
  for (const auto& b : p.blocks()) {
    if (b.is_bias) continue;
    const double bound = std::sqrt(6.0 / b.fan_in);
    for (std::size_t i = 0; i < b.size; ++i) p.data()[b.offset + i] = static_cast<Scalar>(uniform(rng, -bound, bound));
  }
  return p;
}

template <class Scalar>
struct ForwardResult {
  VecX<Scalar> logits;
  VecX<Scalar> latent;
  // argmax[j] = point attaining latent coordinate j (lowest index on ties).
  std::vector<std::size_t> argmax;
  VecX<Scalar> head_hidden;
};

namespace detail {

template <class Scalar>
VecX<Scalar> point_input(const PointCloud& cloud, Eigen::Index i) {
  const auto c = cloud.features.cols();
  VecX<Scalar> x(3 + c);
  for (int k = 0; k < 3; ++k) x(k) = static_cast<Scalar>(cloud.positions(i, k));
  for (Eigen::Index k = 0; k < c; ++k) x(3 + k) = static_cast<Scalar>(cloud.features(i, k));
  return x;
}

template <class Scalar>
Scalar relu(Scalar v) {
  return v > Scalar(0) ? v : Scalar(0);
}

}  // namespace detail

template <class Scalar>
ForwardResult<Scalar> forward(const ClassifierParams<Scalar>& params, const PointCloud& cloud) {
  if (static_cast<int>(cloud.feature_dim()) != params.c())
    throw InvalidArgument("forward: cloud feature dimension differs from the model's");
  if (cloud.size() == 0) throw InvalidArgument("forward: empty cloud");
  const int h = params.h();
  const auto W1 = params.W1();
  const auto b1 = params.b1();
  const auto W2 = params.W2();
  const auto b2 = params.b2();

  ForwardResult<Scalar> out;
  out.latent = VecX<Scalar>::Constant(h, -std::numeric_limits<Scalar>::infinity());
  out.argmax.assign(static_cast<std::size_t>(h), 0);
  VecX<Scalar> a1(h), z(h);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(cloud.size()); ++i) {
    const VecX<Scalar> x = detail::point_input<Scalar>(cloud, i);
    a1.noalias() = W1 * x;
    for (int j = 0; j < h; ++j) a1(j) = detail::relu(a1(j) + b1(j));
    z.noalias() = W2 * a1;
    for (int j = 0; j < h; ++j) {
      const Scalar v = z(j) + b2(j);
      if (v > out.latent(j)) {
        out.latent(j) = v;
        out.argmax[static_cast<std::size_t>(j)] = static_cast<std::size_t>(i);
      }
    }
  }
  out.head_hidden = params.W3() * out.latent + params.b3();
  for (Eigen::Index j = 0; j < out.head_hidden.size(); ++j) out.head_hidden(j) = detail::relu(out.head_hidden(j));
  out.logits = params.W4() * out.head_hidden + params.b4();
  return out;
}

template <class Scalar>
int argmax_label(const VecX<Scalar>& logits) {
  int best = 0;
  for (Eigen::Index k = 1; k < logits.size(); ++k)
    if (logits(k) > logits(best)) best = static_cast<int>(k);
  return best;
}

template <class Scalar>
int predict(const ClassifierParams<Scalar>& params, const PointCloud& cloud) {
  return argmax_label(forward(params, cloud).logits);
}

template <class Scalar>
VecX<Scalar> softmax(const VecX<Scalar>& logits) {
  const Scalar m = logits.maxCoeff();
  VecX<Scalar> e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

namespace detail {

// Backpropagates dlogits through head, pool and encoder, accumulating into
// `grad`. When `input_grad` is set, also writes d(objective)/d(input) per point
// (rows of non-argmax points stay zero).
template <class Scalar>
void backward(const ClassifierParams<Scalar>& params, const PointCloud& cloud, const ForwardResult<Scalar>& fw,
              const VecX<Scalar>& dlogits, ClassifierParams<Scalar>* grad, MatX<Scalar>* input_grad) {
  const int h = params.h();
  VecX<Scalar> dhead = params.W4().transpose() * dlogits;
  for (Eigen::Index j = 0; j < dhead.size(); ++j)
    if (!(fw.head_hidden(j) > Scalar(0))) dhead(j) = Scalar(0);
  const VecX<Scalar> dlatent = params.W3().transpose() * dhead;
  if (grad) {
    grad->W4().noalias() += dlogits * fw.head_hidden.transpose();
    grad->b4() += dlogits;
    grad->W3().noalias() += dhead * fw.latent.transpose();
    grad->b3() += dhead;
  }

  // Group pooled coordinates by the point that won them, in ascending point
  // order so accumulation is deterministic.
  std::vector<std::size_t> order(static_cast<std::size_t>(h));
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return fw.argmax[a] < fw.argmax[b]; });

  const auto W1 = params.W1();
  const auto b1 = params.b1();
  const auto W2 = params.W2();
  VecX<Scalar> dz(h), a1(h), da1(h);
  std::size_t pos = 0;
  while (pos < order.size()) {
    const std::size_t point = fw.argmax[order[pos]];
    dz.setZero();
    while (pos < order.size() && fw.argmax[order[pos]] == point) {
      dz(static_cast<Eigen::Index>(order[pos])) = dlatent(static_cast<Eigen::Index>(order[pos]));
      ++pos;
    }
    const VecX<Scalar> x = point_input<Scalar>(cloud, static_cast<Eigen::Index>(point));
    a1.noalias() = W1 * x;
    for (int j = 0; j < h; ++j) a1(j) = relu(a1(j) + b1(j));
    da1.noalias() = W2.transpose() * dz;
    for (int j = 0; j < h; ++j)
      if (!(a1(j) > Scalar(0))) da1(j) = Scalar(0);
    if (grad) {
      grad->W2().noalias() += dz * a1.transpose();
      grad->b2() += dz;
      grad->W1().noalias() += da1 * x.transpose();
      grad->b1() += da1;
    }
    if (input_grad) input_grad->row(static_cast<Eigen::Index>(point)) += (W1.transpose() * da1).transpose();
  }
}

template <class Scalar>
Scalar cross_entropy(const VecX<Scalar>& logits, int label) {
  const Scalar m = logits.maxCoeff();
  const Scalar lse = m + std::log((logits.array() - m).exp().sum());
  return lse - logits(label);
}

}  // namespace detail

template <class Scalar>
struct LossGrad {
  Scalar loss = 0;
  ClassifierParams<Scalar> grad;
  std::size_t correct = 0;
};

// Mean softmax cross-entropy over the batch and its exact gradient.
template <class Scalar>
LossGrad<Scalar> loss_and_grad(const ClassifierParams<Scalar>& params, std::span<const LabeledCloud> batch) {
  if (batch.empty()) throw InvalidArgument("loss_and_grad: empty batch");
  LossGrad<Scalar> out{Scalar(0), params.zeros_like(), 0};
  const Scalar scale = Scalar(1) / static_cast<Scalar>(batch.size());
  for (const auto& lc : batch) {
    if (lc.label < 0 || lc.label >= params.K()) throw InvalidArgument("loss_and_grad: label out of range");
    const auto fw = forward(params, lc.cloud);
    if (!fw.logits.allFinite()) throw NumericError("loss_and_grad: non-finite logits");
    out.loss += detail::cross_entropy(fw.logits, lc.label) * scale;
    if (argmax_label(fw.logits) == lc.label) ++out.correct;
    VecX<Scalar> dlogits = softmax(fw.logits);
    dlogits(lc.label) -= Scalar(1);
    dlogits *= scale;
    detail::backward(params, lc.cloud, fw, dlogits, &out.grad, static_cast<MatX<Scalar>*>(nullptr));
  }
  return out;
}

template <class Scalar>
Scalar mean_loss(const ClassifierParams<Scalar>& params, std::span<const LabeledCloud> batch) {
  Scalar total = 0;
  for (const auto& lc : batch) total += detail::cross_entropy(forward(params, lc.cloud).logits, lc.label);
  return total / static_cast<Scalar>(batch.size());
}

// ---------------------------------------------------------------------------
// Training

enum class Optimizer { sgd_momentum, adam };

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double lr = 0.01;
  Optimizer optimizer = Optimizer::sgd_momentum;
  double momentum = 0.9;
  // Step decay: lr *= decay_gamma every decay_every epochs (0 disables).
  std::size_t decay_every = 12;
  double decay_gamma = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  Pipeline pipeline;

  void validate() const {
    if (epochs < 1) throw InvalidArgument("train: epochs must be >= 1");
    if (batch_size < 1) throw InvalidArgument("train: batch size must be >= 1");
    if (!(lr > 0)) throw InvalidArgument("train: lr must be > 0");
    pipeline.validate();
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0;
  double train_acc = 0;
  bool operator==(const EpochRecord&) const = default;
};

template <class Scalar>
struct TrainResult {
  ClassifierParams<Scalar> params;
  std::vector<EpochRecord> history;
};

template <class Scalar>
class OptimizerState {
 public:
  OptimizerState(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, Scalar(0)), v_(n, Scalar(0)) {}

  void step(std::vector<Scalar>& theta, const std::vector<Scalar>& g, double lr) {
    ++t_;
    if (cfg_.optimizer == Optimizer::sgd_momentum) {
      const auto mu = static_cast<Scalar>(cfg_.momentum);
      for (std::size_t i = 0; i < theta.size(); ++i) {
        m_[i] = mu * m_[i] + g[i];
        theta[i] -= static_cast<Scalar>(lr) * m_[i];
      }
      return;
    }
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const auto step = static_cast<Scalar>(lr * std::sqrt(c2) / c1);
    const auto eps = static_cast<Scalar>(cfg_.adam_eps);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m_[i] = static_cast<Scalar>(b1) * m_[i] + static_cast<Scalar>(1 - b1) * g[i];
      v_[i] = static_cast<Scalar>(b2) * v_[i] + static_cast<Scalar>(1 - b2) * g[i] * g[i];
      theta[i] -= step * m_[i] / (std::sqrt(v_[i]) + eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Scalar> m_, v_;
  std::size_t t_ = 0;
};

// Mini-batch training on `dataset`, each sample passed through the pipeline
// with randomness keyed by (pipeline seed, sample index, epoch).
template <class Scalar>
TrainResult<Scalar> train(ClassifierParams<Scalar> params, const Dataset& dataset, const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("train: empty dataset");
  if (dataset.c != params.c() || dataset.K != params.K()) throw InvalidArgument("train: dataset/model dims differ");

  TrainResult<Scalar> out{std::move(params), {}};
  OptimizerState<Scalar> opt(cfg, out.params.size());
  const std::size_t N = dataset.size();
  std::vector<std::size_t> order(N);
  std::vector<LabeledCloud> batch;
  batch.reserve(cfg.batch_size);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr =
        cfg.lr * (cfg.decay_every ? std::pow(cfg.decay_gamma, static_cast<double>(epoch / cfg.decay_every)) : 1.0);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(cfg.seed, {epoch, 0x5407});
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < N; b += cfg.batch_size) {
      batch.clear();
      for (std::size_t i = b; i < std::min(N, b + cfg.batch_size); ++i) {
        const auto& src = dataset.clouds[order[i]];
        batch.push_back(LabeledCloud{pipeline_apply(src.cloud, cfg.pipeline, order[i], epoch), src.label, src.poisoned});
      }
      LossGrad<Scalar> lg;
      try {
        lg = loss_and_grad<Scalar>(out.params, batch);
      } catch (const TrainingError&) {
        throw;
      } catch (const NumericError& e) {
        throw TrainingError(e.what(), epoch);
      }
      if (!std::isfinite(static_cast<double>(lg.loss)) || !lg.grad.all_finite())
        throw TrainingError("train: non-finite loss", epoch);
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(batch.size());
      correct += lg.correct;
      opt.step(out.params.data(), lg.grad.data(), lr);
    }
    if (!out.params.all_finite()) throw TrainingError("train: parameters diverged", epoch);
    out.history.push_back({epoch, loss_sum / static_cast<double>(N), static_cast<double>(correct) / static_cast<double>(N)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

template <class Scalar>
double evaluate_acc(const ClassifierParams<Scalar>& params, const Dataset& dataset, const Pipeline& inference = {}) {
  if (dataset.empty()) throw InvalidArgument("evaluate_acc: empty dataset");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& lc = dataset.clouds[i];
    hit += predict(params, pipeline_apply(lc.cloud, inference, i, 0)) == lc.label ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(dataset.size());
}

// Generic success rate: clouds accepted by `eligible` get `trigger` applied and
// count as a success when predicted as `target(label)`.
template <class Scalar, class Eligible, class TriggerFn, class TargetFn>
double attack_success_rate(const ClassifierParams<Scalar>& params, const Dataset& test, Eligible eligible,
                           TriggerFn trigger, TargetFn target, const Pipeline& inference = {}) {
  std::size_t total = 0, hit = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& lc = test.clouds[i];
    if (!eligible(lc.label)) continue;
    ++total;
    hit += predict(params, pipeline_apply(trigger(lc.cloud, i), inference, i, 0)) == target(lc.label) ? 1 : 0;
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

// ASR of the feature-shift trigger. All-to-all uses (y + 1) mod K unless a
// custom map is given; a map that sends any label to itself is rejected.
template <class Scalar>
double evaluate_asr(const ClassifierParams<Scalar>& params, const Dataset& test, const PoisonSpec& spec,
                    const std::function<int(int)>& target_map = {}, const Pipeline& inference = {}) {
  spec.validate(test.K);
  auto trig = [&](const PointCloud& c, std::size_t i) { return implant_trigger(c, spec, i); };
  if (spec.mode == AttackMode::all_to_one)
    return attack_success_rate(
        params, test, [&](int y) { return y != spec.target; }, trig, [&](int) { return spec.target; }, inference);
  std::function<int(int)> map = target_map ? target_map : [&](int y) { return all_to_all_target(y, test.K); };
  for (int y = 0; y < test.K; ++y)
    if (map(y) == y) throw InvalidArgument("evaluate_asr: all-to-all target must differ from the true label");
  return attack_success_rate(
      params, test, [](int) { return true; }, trig, map, inference);
}

template <class Scalar>
double evaluate_asr_ball(const ClassifierParams<Scalar>& params, const Dataset& test, const BallTrigger& ball,
                         int target, std::uint64_t seed, const Pipeline& inference = {}) {
  return attack_success_rate(
      params, test, [&](int y) { return y != target; },
      [&](const PointCloud& c, std::size_t i) { return implant_ball_trigger(c, ball, derive_seed(seed, {i})); },
      [&](int) { return target; }, inference);
}

// L2 norm of d logit[class] / d (position, feature) per point; zero for points
// that win no pooled coordinate.
template <class Scalar>
std::vector<double> point_saliency(const ClassifierParams<Scalar>& params, const PointCloud& cloud, int cls) {
  if (cls < 0 || cls >= params.K()) throw InvalidArgument("point_saliency: class out of range");
  const auto fw = forward(params, cloud);
  VecX<Scalar> dlogits = VecX<Scalar>::Zero(params.K());
  dlogits(cls) = Scalar(1);
  MatX<Scalar> gin = MatX<Scalar>::Zero(static_cast<Eigen::Index>(cloud.size()), params.in_dim());
  detail::backward(params, cloud, fw, dlogits, static_cast<ClassifierParams<Scalar>*>(nullptr), &gin);
  std::vector<double> out(cloud.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(gin.row(static_cast<Eigen::Index>(i)).norm());
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: header + float32 parameter blob + checksum.

inline constexpr std::string_view kCheckpointMagic = "PCBM";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  Params params;
  // Seeds the parameters descend from (init seed, training seed, ...).
  std::vector<std::uint64_t> lineage;
  bool operator==(const Checkpoint&) const = default;
};

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  binio::Writer w;
  w.bytes(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ck.params.c()));
  w.u32(static_cast<std::uint32_t>(ck.params.K()));
  w.u32(static_cast<std::uint32_t>(ck.params.h()));
  w.u32(static_cast<std::uint32_t>(ck.lineage.size()));
  for (auto s : ck.lineage) w.u64(s);
  w.u64(ck.params.size());
  for (float v : ck.params.data()) w.f32(v);
  w.seal();
  return w.data();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  binio::check_seal(bytes);
  binio::Reader r(bytes);
  if (r.bytes(4) != kCheckpointMagic) throw FormatError("checkpoint: bad magic");
  if (r.u32() != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
  const int c = static_cast<int>(r.u32());
  const int K = static_cast<int>(r.u32());
  const int h = static_cast<int>(r.u32());
  if (c < 1 || K < 1 || h < 1 || c > 4096 || K > 1 << 20 || h > 1 << 16) throw FormatError("checkpoint: bad dims");
  Checkpoint ck{Params(c, K, h), {}};
  const std::size_t nl = r.u32();
  if (nl > r.remaining() / 8) throw FormatError("checkpoint: bad lineage");
  for (std::size_t i = 0; i < nl; ++i) ck.lineage.push_back(r.u64());
  if (r.u64() != ck.params.size()) throw FormatError("checkpoint: parameter count mismatch");
  for (auto& v : ck.params.data()) v = r.f32();
  r.verify_seal();
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  binio::write_file_atomic(path, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path));
}

}  // namespace pcb
