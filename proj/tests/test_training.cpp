#include <gtest/gtest.h>

#include "awt/analysis.hpp"
#include "awt/training.hpp"
#include "test_util.hpp"

using namespace awt;
using namespace awt::test;

namespace {

// Two separable 2-D blobs in [0,1]^2, centres 0.6 apart, radius 0.1.
Dataset two_blobs(std::size_t n, Rng& r) {
  Dataset d{Matrix(static_cast<Eigen::Index>(n), 2), Matrix(), std::vector<int>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    const double cx = c ? 0.8 : 0.2, cy = c ? 0.8 : 0.2;
    const double a = 2 * M_PI * r.uniform(), rad = 0.1 * std::sqrt(r.uniform());
    d.inputs(static_cast<Eigen::Index>(i), 0) = cx + rad * std::cos(a);
    d.inputs(static_cast<Eigen::Index>(i), 1) = cy + rad * std::sin(a);
    d.labels[i] = c;
  }
  d.targets = one_hot(d.labels, 2);
  return d;
}

Dataset xor_data() {
  Dataset d{Matrix(4, 2), Matrix(4, 1), {0, 1, 1, 0}};
  d.inputs << 0, 0, 0, 1, 1, 0, 1, 1;
  d.targets << -1, 1, 1, -1;
  return d;
}

double naive_accuracy(const Params& p, const Mask* m, const Dataset& d) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Vector out = forward(p, m, Vector(d.inputs.row(static_cast<Eigen::Index>(i)).transpose()));
    int best = 0;
    if (out.size() == 1) {
      best = out(0) > 0.0;
    } else {
      for (int j = 1; j < out.size(); ++j)
        if (out(j) > out(best)) best = j;
    }
    hit += best == d.labels[i];
  }
  return static_cast<double>(hit) / static_cast<double>(d.size());
}

}  // namespace

TEST(AdversarialTrain, SeparableBlobsReachFullAccuracy) {
  Rng r(1);
  const Dataset d = two_blobs(200, r);
  const MlpSpec s{{2, 16, 2}};
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 20;
  cfg.learning_rate = 1e-2;
  // Margin between blobs is about 0.65, well above 2 * eps.
  cfg.attack = training_attack_config(0.05, 10, 3);
  const auto res = adversarial_train(init_params(s, r), nullptr, d, cfg);
  EXPECT_EQ(evaluate(res.params, nullptr, d, std::nullopt).clean_acc, 1.0);
  EXPECT_EQ(res.trace.size(), 50u);
  EXPECT_EQ(res.trace.series("train_clean_acc").back(), 1.0);
}

TEST(AdversarialTrain, ZeroBudgetMatchesNaturalTraining) {
  Rng r(2);
  const Dataset d = two_blobs(64, r);
  const MlpSpec s{{2, 8, 2}};
  const Params p0 = init_params(s, r);
  TrainConfig nat;
  nat.epochs = 5;
  nat.batch_size = 16;
  nat.seed = 7;
  TrainConfig adv = nat;
  adv.attack = training_attack_config(0.0, 5);
  adv.attack->step_size = 0.0;
  const Mask m = random_mask(s, 0.6, r);
  for (const Mask* mk : {static_cast<const Mask*>(nullptr), &m}) {
    const auto a = natural_train(p0, mk, d, nat);
    const auto b = adversarial_train(p0, mk, d, adv);
    EXPECT_TRUE(a.params.theta == b.params.theta);
    EXPECT_EQ(a.trace.series("train_loss"), b.trace.series("train_loss"));
  }
}

TEST(AdversarialTrain, WarmupScalesBudgetPerEpoch) {
  Rng r(4);
  const Dataset d = two_blobs(64, r);
  const MlpSpec s{{2, 8, 2}};
  const Params p0 = init_params(s, r);
  TrainConfig ramp;
  ramp.epochs = 4;
  ramp.batch_size = 16;
  ramp.epsilon_warmup = 4;
  ramp.attack = training_attack_config(0.2, 5, 9);
  // Epoch 1 of a 4-epoch ramp attacks with a quarter of the budget and step.
  TrainConfig quarter = ramp;
  quarter.epochs = 1;
  quarter.epsilon_warmup = 0;
  quarter.attack->epsilon *= 0.25;
  quarter.attack->step_size *= 0.25;
  Vector after_first;
  adversarial_train(p0, nullptr, d, ramp, [&](std::size_t e, const Params& p) {
    if (e == 1) after_first = p.theta;
  });
  EXPECT_TRUE(adversarial_train(p0, nullptr, d, quarter).params.theta == after_first);
  // Warmup 1 is a no-op, and a ramp longer than the run ends at full budget.
  TrainConfig one = ramp, none = ramp, longer = ramp;
  one.epsilon_warmup = 1;
  none.epsilon_warmup = 0;
  longer.epsilon_warmup = 40;
  EXPECT_TRUE(adversarial_train(p0, nullptr, d, one).params.theta ==
              adversarial_train(p0, nullptr, d, none).params.theta);
  EXPECT_TRUE(adversarial_train(p0, nullptr, d, longer).params.theta ==
              adversarial_train(p0, nullptr, d, ramp).params.theta);
}

TEST(AdversarialTrain, ToyLinearModelAlignsWithMean) {
  GaussianToySpec toy;
  toy.seed = 4;
  const Dataset d = sample_toy(toy);
  const MlpSpec s{{100, 1}, false};
  Rng r(4);
  TrainConfig cfg;
  cfg.loss = LossKind::squared;
  cfg.learning_rate = 1e-3;
  cfg.epochs = 20;
  cfg.attack = toy_attack_config(toy.epsilon, 10, 4);
  const auto res = adversarial_train(init_params(s, r), nullptr, d, cfg);
  EXPECT_GE(cosine(res.params.theta, toy.mean()), 0.97);
}

TEST(NaturalTrain, FullBatchLinearLossDecreasesMonotonically) {
  Rng r(5);
  Dataset d{random_matrix(40, 3, r), Matrix(), std::vector<int>(40, 0)};
  d.targets = d.inputs * Vector((Vector(3) << 1.0, -2.0, 0.5).finished()) + random_matrix(40, 1, r, 0.1);
  const MlpSpec s{{3, 1}, false};
  // Hessian of the mean of 0.5 (w.x - y)^2 is X^T X / N.
  const double lmax =
      Eigen::SelfAdjointEigenSolver<Matrix>(d.inputs.transpose() * d.inputs / 40.0).eigenvalues().maxCoeff();
  TrainConfig cfg;
  cfg.loss = LossKind::squared;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.learning_rate = 1.0 / lmax;
  cfg.epochs = 30;
  cfg.batch_size = 40;
  const auto res = natural_train(init_params(s, r), nullptr, d, cfg);
  const auto loss = res.trace.series("train_loss");
  for (std::size_t i = 1; i < loss.size(); ++i) EXPECT_LE(loss[i], loss[i - 1]);
  EXPECT_LT(loss.back(), 0.1 * loss.front());
}

TEST(NaturalTrain, DeterministicForFixedSeed) {
  Rng r(6);
  const Dataset d = two_blobs(50, r);
  const MlpSpec s{{2, 6, 2}};
  const Params p0 = init_params(s, r);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 3;
  EXPECT_TRUE(natural_train(p0, nullptr, d, cfg).params.theta ==
              natural_train(p0, nullptr, d, cfg).params.theta);
  TrainConfig other = cfg;
  other.seed = 4;
  EXPECT_FALSE(natural_train(p0, nullptr, d, cfg).params.theta ==
               natural_train(p0, nullptr, d, other).params.theta);
}

TEST(NaturalTrain, XorFitsWithSmallReluNet) {
  const Dataset d = xor_data();
  const MlpSpec s{{2, 8, 1}};
  TrainConfig cfg;
  cfg.loss = LossKind::squared;
  cfg.epochs = 2000;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-2;
  Rng r(7);
  const auto res = natural_train(generic_params(s, r), nullptr, d, cfg);
  EXPECT_EQ(evaluate(res.params, nullptr, d, std::nullopt).clean_acc, 1.0);
}

TEST(Training, PrunedCoordinatesNeverMove) {
  Rng r(8);
  const Dataset d = two_blobs(48, r);
  const MlpSpec s{{2, 10, 2}};
  const Mask m = random_mask(s, 0.4, r);
  Params p0 = init_params(s, r);
  Params zeroed = p0;
  zeroed.theta = effective_params(p0, &m);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 12;
  cfg.attack = training_attack_config(0.05, 3);
  for (const Params& start : {p0, zeroed}) {
    const auto res = adversarial_train(start, &m, d, cfg);
    for (Eigen::Index i = 0; i < m.values.size(); ++i)
      if (m.values(i) == 0.0) {
        EXPECT_EQ(res.params.theta(i), start.theta(i));
      }
  }
}

TEST(Evaluate, ZeroBudgetRobustEqualsClean) {
  Rng r(9);
  const Dataset d = two_blobs(300, r);
  const MlpSpec s{{2, 6, 2}};
  const Params p = init_params(s, r);
  const auto e = evaluate(p, nullptr, d, eval_attack_config(0.0));
  ASSERT_TRUE(e.robust_acc);
  EXPECT_EQ(*e.robust_acc, e.clean_acc);
  EXPECT_EQ(e.clean_acc, naive_accuracy(p, nullptr, d));
  const Mask m = random_mask(s, 0.5, r);
  EXPECT_EQ(evaluate(p, &m, d, std::nullopt).clean_acc, naive_accuracy(p, &m, d));
}

TEST(Evaluate, ConstantCorrectClassifier) {
  const MlpSpec s{{3, 2}};
  Params p{s, Vector::Zero(static_cast<Eigen::Index>(s.param_count()))};
  layer_bias(s, p.theta, 0)(1) = 1.0;
  Rng r(10);
  Dataset d{random_matrix(20, 3, r), Matrix(), std::vector<int>(20, 1)};
  d.targets = one_hot(d.labels, 2);
  EXPECT_EQ(evaluate(p, nullptr, d, std::nullopt).clean_acc, 1.0);
}

TEST(Evaluate, ToyBayesRobustAccuracyMatchesClosedForm) {
  GaussianToySpec toy;
  toy.seed = 11;
  const Dataset d = sample_toy(toy);
  const MlpSpec s{{100, 1}, false};
  const Params bayes{s, toy.mean()};
  AttackConfig a = eval_attack_config(toy.epsilon, 11);
  a.norm = NormOrder::l2;
  a.clip_box.reset();
  const auto e = evaluate(bayes, nullptr, d, a, LossKind::logistic);
  ASSERT_TRUE(e.robust_acc);
  EXPECT_NEAR(closed_form_adv_acc(toy.mean(), toy), 0.8427, 5e-5);
  EXPECT_NEAR(*e.robust_acc, closed_form_adv_acc(toy.mean(), toy), 0.02);
  // The exact linear worst case is the strongest attack in the ball.
  EXPECT_GE(*e.robust_acc, linear_accuracy(toy.mean(), d, toy.epsilon).robust);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.epochs = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  const MlpSpec s{{2, 2}};
  Rng r(1);
  const Dataset d = two_blobs(4, r);
  EXPECT_THROW(adversarial_train(init_params(s, r), nullptr, d, TrainConfig{}),
               std::invalid_argument);
}
