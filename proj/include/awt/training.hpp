#pragma once

// Mini-batch natural and adversarial training of a (masked) MLP, plus clean
// and robust accuracy.

#include <functional>
#include <optional>
#include <stdexcept>

#include "awt/attacks.hpp"
#include "awt/data.hpp"
#include "awt/network.hpp"
#include "awt/optim.hpp"

namespace awt {

/// Training-time attack: fewer iterations than the evaluation protocol.
inline AttackConfig training_attack_config(double epsilon, std::size_t steps = 40,
                                           std::uint64_t seed = 0) {
  AttackConfig c;
  c.norm = NormOrder::linf;
  c.epsilon = epsilon;
  c.steps = steps;
  c.step_size = 2.5 * epsilon / static_cast<double>(steps);
  c.clip_box = std::make_pair(0.0, 1.0);
  c.random_start = true;
  c.rng = Rng(seed, 0x7472);
  return c;
}

struct TrainConfig {
  LossKind loss = LossKind::cross_entropy;
  OptimizerKind optimizer = OptimizerKind::adam;
  double learning_rate = 1e-3;
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  std::optional<AttackConfig> attack;  // absent: natural training
  std::size_t epsilon_warmup = 0;      // epochs of linear budget ramp-up, capped at `epochs`
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (attack) attack->validate();
  }
};

struct EvalResult {
  double clean_acc = 0.0;
  std::optional<double> robust_acc;
};

inline double accuracy(const Matrix& outputs, const std::vector<int>& labels) {
  if (outputs.rows() == 0) throw std::invalid_argument("accuracy: empty batch");
  std::size_t hit = 0;
  for (Eigen::Index n = 0; n < outputs.rows(); ++n)
    hit += predict_class(outputs.row(n)) == labels[static_cast<std::size_t>(n)];
  return static_cast<double>(hit) / static_cast<double>(outputs.rows());
}

/// Clean accuracy and, when an attack is given, accuracy on attacked inputs.
/// The attack maximises `loss` against the data targets; chunk c of 256 rows
/// draws its random starts from attack.rng.fork(c).
inline EvalResult evaluate(const Params& p, const Mask* mask, const Dataset& data,
                           const std::optional<AttackConfig>& attack,
                           LossKind loss = LossKind::cross_entropy) {
  data.validate();
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const Vector eff = effective_params(p, mask);
  EvalResult r;
  r.clean_acc = accuracy(forward_pass(p.spec, eff, data.inputs).output, data.labels);
  if (attack) {
    const Eigen::Index chunk = 256;
    Matrix adv(data.inputs.rows(), data.inputs.cols());
    for (Eigen::Index s = 0, c = 0; s < data.inputs.rows(); s += chunk, ++c) {
      const Eigen::Index n = std::min(chunk, data.inputs.rows() - s);
      AttackConfig a = *attack;
      a.rng = attack->rng.fork(static_cast<std::uint64_t>(c));
      adv.middleRows(s, n) = iterative_attack(p.spec, eff, data.inputs.middleRows(s, n),
                                              data.targets.middleRows(s, n), loss, a);
    }
    r.robust_acc = accuracy(forward_pass(p.spec, eff, adv).output, data.labels);
  }
  return r;
}

struct TrainResult {
  Params params;
  MetricsTrace trace;
};

/// Called after every epoch with the 1-based epoch number and current params.
using EpochCallback = std::function<void(std::size_t, const Params&)>;

namespace detail {

constexpr std::uint64_t kTrainOrderStream = 0x6f64;

inline TrainResult train_loop(const Params& p0, const Mask* mask, const Dataset& data,
                              const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  data.validate();
  if (data.empty()) throw std::invalid_argument("training on an empty dataset");
  check_mask(p0.spec, mask);
  Params p = p0;
  const MlpSpec& spec = p.spec;
  Optimizer opt(cfg.optimizer, cfg.learning_rate, p.theta.size());
  Rng order_rng(cfg.seed, kTrainOrderStream);
  const std::size_t N = data.size();
  TrainResult res;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = permutation(N, order_rng);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < N; start += cfg.batch_size) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(N, start + cfg.batch_size)));
      Matrix X = gather_rows(data.inputs, idx);
      const Matrix Y = gather_rows(data.targets, idx);
      if (cfg.attack) {
        AttackConfig a = *cfg.attack;
        a.rng = cfg.attack->rng.fork(step);
        if (const auto w = std::min(cfg.epsilon_warmup, cfg.epochs); epoch <= w) {
          const double f = static_cast<double>(epoch) / static_cast<double>(w);
          a.epsilon *= f;
          a.step_size *= f;
        }
        X = iterative_attack(spec, effective_params(p, mask), X, Y, cfg.loss, a);
      }
      const auto g = batch_loss_and_grads(p, mask, X, Y, cfg.loss);
      Vector delta = opt.step(g.grad_params);
      if (mask) delta.array() *= mask->values.array();
      p.theta += delta;
      loss_sum += g.loss * static_cast<double>(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i)
        hits += predict_class(g.outputs.row(static_cast<Eigen::Index>(i))) ==
                data.labels[idx[i]];
      ++step;
    }
    const double clean = accuracy(forward_batch(p, mask, data.inputs), data.labels);
    res.trace.add(epoch, {{"train_loss", loss_sum / static_cast<double>(N)},
                          {cfg.attack ? "train_adv_acc" : "train_batch_acc",
                           static_cast<double>(hits) / static_cast<double>(N)},
                          {"train_clean_acc", clean}});
    if (on_epoch) on_epoch(epoch, p);
  }
  res.params = std::move(p);
  return res;
}

}  // namespace detail

/// Each step attacks the current (masked) network on the batch, then takes an
/// optimizer step on the adversarial batch loss. The attack for global step t
/// uses cfg.attack->rng.fork(t). Pruned coordinates never change.
inline TrainResult adversarial_train(const Params& p0, const Mask* mask, const Dataset& data,
                                     const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (!cfg.attack) throw std::invalid_argument("adversarial training needs an attack");
  return detail::train_loop(p0, mask, data, cfg, on_epoch);
}

inline TrainResult natural_train(const Params& p0, const Mask* mask, const Dataset& data,
                                 const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  if (cfg.attack) throw std::invalid_argument("natural training takes no attack");
  return detail::train_loop(p0, mask, data, cfg, on_epoch);
}

}  // namespace awt
