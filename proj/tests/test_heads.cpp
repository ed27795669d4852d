#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "lpgnet/data.hpp"
#include "lpgnet/errors.hpp"
#include "lpgnet/heads.hpp"
#include "lpia_oracle.hpp"
#include "test_util.hpp"

using namespace lpgnet;
using namespace lpgnet::testing;

namespace {

Tensor probs_of(std::vector<std::vector<double>> rows) {
  std::vector<double> flat;
  for (auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({rows.size(), rows.front().size()}, flat);
}

double oracle_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) s += p[j] * std::log(p[j] / q[j]);
  return s;
}

}  // namespace

// ---- classifier -------------------------------------------------------------------

TEST(Classify, ZeroWeightsGiveUniform) {
  heads::LinearHead h{Tensor::zeros({3, 4}), Tensor::zeros({4})};
  Rng rng(1, "c");
  auto c = heads::classify(rand_tensor({2, 5, 3}, rng), h);
  ASSERT_EQ(c.probs.shape(), (Shape{2, 5, 4}));
  for (double p : c.probs.data()) EXPECT_EQ(p, 0.25);
}

TEST(Classify, BiasDominance) {
  heads::LinearHead h{Tensor::zeros({3, 4}), Tensor({4}, {10, 0, 0, 0})};
  Rng rng(2, "c");
  auto c = heads::classify(rand_tensor({2, 5, 3}, rng), h);
  for (int y : heads::argmax_lastdim(c.logits)) EXPECT_EQ(y, 0);
}

TEST(Classify, MatchesDirectEvaluation) {
  Rng rng(3, "c");
  heads::LinearHead h{rand_tensor({3, 4}, rng), rand_tensor({4}, rng)};
  Tensor f = rand_tensor({2, 3, 3}, rng);
  auto c = heads::classify(f, h);
  for (std::size_t r = 0; r < 6; ++r) {
    std::vector<double> row(f.data().begin() + r * 3, f.data().begin() + r * 3 + 3);
    auto logits = oracle_affine(row, h.weight, &h.bias);
    auto p = naive_softmax(logits);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(c.logits[r * 4 + j], logits[j], 1e-12);
      EXPECT_NEAR(c.probs[r * 4 + j], p[j], 1e-12);
    }
  }
}

TEST(Classify, ArgmaxTiesGoToLowestClass) {
  EXPECT_EQ(heads::argmax_lastdim(Tensor({2, 3}, {1, 1, 0, 0, 2, 2})), (std::vector<int>{0, 1}));
}

TEST(Heads, RegistrationAndClassCount) {
  ParamStore store;
  Rng rng(4, "h");
  heads::register_params(store, 8, 4, true, rng);
  EXPECT_EQ(store.scalar_count("head.teacher."), 8u * 4 + 4);
  EXPECT_EQ(store.scalar_count("head.student_"), 2u * (8 * 4 + 4));
  ParamStore bare;
  heads::register_params(bare, 8, 4, false, rng);
  EXPECT_EQ(bare.scalar_count("head.student_"), 0u);
  EXPECT_THROW(heads::register_params(bare, 8, 1, false, rng), ContractError);
}

// ---- task loss --------------------------------------------------------------------

TEST(TaskLoss, PerfectPredictionsGiveZero) {
  Tensor p = probs_of({{1, 0, 0}, {0, 0, 1}});
  const std::vector<int> y{0, 2};
  EXPECT_EQ(heads::task_loss(p, y).item(), 0.0);
}

TEST(TaskLoss, UniformPredictionsGiveLogC) {
  Tensor p = Tensor::full({3, 4}, 0.25);
  const std::vector<int> y{0, 3, 1};
  EXPECT_NEAR(heads::task_loss(p, y).item(), std::log(4.0), 1e-15);
  EXPECT_NEAR(std::log(4.0), 1.386294, 1e-6);
}

TEST(TaskLoss, MixedHandComputed) {
  Tensor p = probs_of({{0.7, 0.2, 0.1}, {0.3, 0.3, 0.4}, {0.05, 0.9, 0.05}});
  const std::vector<int> y{0, 2, 1};
  const double expect = -(std::log(0.7) + std::log(0.4) + std::log(0.9)) / 3.0;
  EXPECT_NEAR(heads::task_loss(p, y).item(), expect, 1e-15);
}

TEST(TaskLoss, PaddingIsIgnored) {
  Tensor p = probs_of({{0.7, 0.3}, {0.01, 0.99}, {0.4, 0.6}});
  const std::vector<int> y{0, data::kPadLabel, 1};
  EXPECT_NEAR(heads::task_loss(p, y).item(), -(std::log(0.7) + std::log(0.6)) / 2.0, 1e-15);
  const std::vector<int> none{data::kPadLabel, data::kPadLabel, data::kPadLabel};
  EXPECT_THROW(heads::task_loss(p, none), ContractError);
}

TEST(TaskLoss, PermutationInvariant) {
  Rng rng(5, "t");
  Tensor logits = rand_tensor({6, 4}, rng);
  Tensor p = softmax_lastdim(logits);
  std::vector<int> y{0, 1, 2, 3, 1, 0};
  const std::vector<std::size_t> perm{3, 5, 0, 2, 1, 4};
  std::vector<double> pv(24);
  std::vector<int> yv(6);
  for (std::size_t i = 0; i < 6; ++i) {
    std::copy_n(p.data().begin() + perm[i] * 4, 4, pv.begin() + i * 4);
    yv[i] = y[perm[i]];
  }
  EXPECT_NEAR(heads::task_loss(Tensor({6, 4}, pv), yv).item(), heads::task_loss(p, y).item(), 1e-15);
}

// ---- students and temperature -----------------------------------------------------

TEST(Student, UnitTemperatureSharesDistribution) {
  Rng rng(6, "s");
  heads::LinearHead h{rand_tensor({3, 4}, rng), rand_tensor({4}, rng)};
  auto s = heads::student_forward(rand_tensor({2, 3}, rng), h, 1.0);
  EXPECT_EQ(s.soft_probs.node(), s.probs.node());
}

TEST(Student, TemperatureScaling) {
  heads::LinearHead h{Tensor({2, 2}, {1, 0, 0, 1}), Tensor::zeros({2})};
  Tensor x({1, 2}, {2.0, 0.0});
  auto s = heads::student_forward(x, h, 2.0);
  auto expect = naive_softmax({1.0, 0.0});
  EXPECT_NEAR(s.soft_probs[0], expect[0], 1e-15);
  EXPECT_NEAR(s.soft_probs[1], expect[1], 1e-15);
  auto hot = heads::student_forward(x, h, 1e6);
  EXPECT_NEAR(hot.soft_probs[0], 0.5, 1e-6);
  EXPECT_THROW(heads::student_forward(x, h, 0.0), ContractError);
  EXPECT_THROW(heads::soften(x, -1.0), ContractError);
}

TEST(Student, InputPassesThroughRelu) {
  Rng rng(7, "s");
  heads::LinearHead h{rand_tensor({3, 2}, rng), rand_tensor({2}, rng)};
  Tensor x({1, 3}, {-1.0, 2.0, -3.0});
  auto s = heads::student_forward(x, h, 1.0);
  auto logits = oracle_affine({0.0, 2.0, 0.0}, h.weight, &h.bias);
  EXPECT_NEAR(s.logits[0], logits[0], 1e-15);
  EXPECT_NEAR(s.logits[1], logits[1], 1e-15);
}

// ---- distillation ------------------------------------------------------------------

TEST(Kl, HandComputedValue) {
  const std::vector<int> y{0};
  const double kl = heads::kl_divergence(probs_of({{0.75, 0.25}}), probs_of({{0.5, 0.5}}), y).item();
  EXPECT_NEAR(kl, 0.75 * std::log(1.5) + 0.25 * std::log(0.5), 1e-15);
  EXPECT_NEAR(kl, 0.130812, 1e-6);
}

TEST(Kl, IdenticalDistributionsGiveZero) {
  Tensor p = probs_of({{0.1, 0.6, 0.3}, {0.2, 0.2, 0.6}});
  const std::vector<int> y{0, 1};
  EXPECT_EQ(heads::kl_divergence(p, p, y).item(), 0.0);
}

TEST(Kl, NonNegativeAndMatchesOracle) {
  Rng rng(8, "kl");
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t rows = 1 + rng.below(4), c = 2 + rng.below(5);
    Tensor p = softmax_lastdim(rand_tensor({rows, c}, rng, false, 3.0));
    Tensor q = softmax_lastdim(rand_tensor({rows, c}, rng, false, 3.0));
    std::vector<int> y(rows, 0);
    const double kl = heads::kl_divergence(p, q, y).item();
    double expect = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      std::vector<double> pr(p.data().begin() + r * c, p.data().begin() + (r + 1) * c);
      std::vector<double> qr(q.data().begin() + r * c, q.data().begin() + (r + 1) * c);
      expect += oracle_kl(pr, qr) / rows;
    }
    ASSERT_GE(kl, -1e-12);
    ASSERT_NEAR(kl, expect, 1e-12);
  }
}

TEST(Distill, DirectionSelectsArgumentOrder) {
  Tensor s = probs_of({{0.75, 0.25}}), t = probs_of({{0.5, 0.5}});
  const std::vector<int> y{1};
  auto st = heads::distill_losses(s, t, s, y);
  auto ts = heads::distill_losses(s, t, s, y, heads::KlDirection::teacher_student);
  EXPECT_NEAR(st.kl.item(), oracle_kl({0.75, 0.25}, {0.5, 0.5}), 1e-15);
  EXPECT_NEAR(ts.kl.item(), oracle_kl({0.5, 0.5}, {0.75, 0.25}), 1e-15);
  EXPECT_NEAR(st.ce.item(), -std::log(0.25), 1e-15);
  EXPECT_EQ(heads::parse_kl_direction(heads::to_string(heads::KlDirection::teacher_student)),
            heads::KlDirection::teacher_student);
  EXPECT_THROW(heads::parse_kl_direction("sideways"), ContractError);
}

TEST(Distill, NoGradientReachesTeacherThroughKl) {
  Rng rng(9, "d");
  Tensor teacher_w = rand_tensor({3, 4}, rng, true);
  Tensor student_w = rand_tensor({3, 4}, rng, true);
  Tensor x = rand_tensor({5, 3}, rng);
  auto teacher = heads::classify(x, {teacher_w, Tensor::zeros({4})});
  auto student = heads::student_forward(x, {student_w, Tensor::zeros({4})}, 2.0);
  const std::vector<int> y{0, 1, 2, 3, 0};
  auto d = heads::distill_losses(student.soft_probs, heads::soften(teacher.logits.detach(), 2.0), student.probs, y);
  backward(d.kl);
  EXPECT_FALSE(teacher_w.has_grad());
  EXPECT_TRUE(student_w.has_grad());
}

TEST(Distill, KlGradientMatchesFiniteDifferences) {
  Rng rng(10, "d");
  const std::vector<int> y{0, data::kPadLabel, 2};
  Tensor target = softmax_lastdim(rand_tensor({3, 3}, rng));
  for (auto dir : {heads::KlDirection::student_teacher, heads::KlDirection::teacher_student}) {
    auto f = [&](const std::vector<Tensor>& x) {
      Tensor p = heads::soften(x[0], 1.7);
      auto d = heads::distill_losses(p, target, softmax_lastdim(x[0]), y, dir);
      return add(d.kl, d.ce);
    };
    EXPECT_LT(grad_error(f, {rand_tensor({3, 3}, rng, true)}), 1e-6);
  }
}

// ---- total objective ---------------------------------------------------------------

TEST(TotalLoss, WeightedSumExample) {
  heads::LossTerms t{Tensor::scalar(1.0), Tensor::scalar(0.5), Tensor::scalar(0.5), Tensor::scalar(0.1),
                     Tensor::scalar(0.1)};
  auto b = heads::total_loss(t, {1.5, 1.0, 0.3});
  EXPECT_NEAR(b.total, 2.56, 1e-12);
  EXPECT_NEAR(b.objective.item(), 2.56, 1e-12);
}

TEST(TotalLoss, DefaultWeights) {
  heads::LossWeights w;
  EXPECT_EQ(w.task, 1.5);
  EXPECT_EQ(w.ce, 1.0);
  EXPECT_EQ(w.kl, 0.3);
}

TEST(TotalLoss, ZeroDistillationWeightsLeaveTaskOnly) {
  Rng rng(11, "t");
  Tensor student = rand_tensor({2}, rng, true);
  heads::LossTerms t{Tensor::scalar(0.8), sum(student), Tensor::scalar(0.4), sum(mul(student, student)),
                     Tensor::scalar(0.2)};
  auto b = heads::total_loss(t, {1.5, 0.0, 0.0});
  EXPECT_EQ(b.total, 1.5 * 0.8);
  EXPECT_EQ(b.objective.item(), 1.5 * 0.8);
  backward(b.objective);
  EXPECT_FALSE(student.has_grad());
}

TEST(TotalLoss, IdentityHoldsForRandomComponents) {
  Rng rng(12, "t");
  for (int trial = 0; trial < 200; ++trial) {
    heads::LossTerms t{Tensor::scalar(rng.uniform(0, 3)), Tensor::scalar(rng.uniform(0, 3)),
                       Tensor::scalar(rng.uniform(0, 3)), Tensor::scalar(rng.uniform(0, 1)),
                       Tensor::scalar(rng.uniform(0, 1))};
    heads::LossWeights w{rng.uniform(0, 2), rng.uniform(0, 2), rng.uniform(0, 2)};
    auto b = heads::total_loss(t, w);
    const double expect = w.task * b.task + w.ce * (b.ce_t + b.ce_a) + w.kl * (b.kl_t + b.kl_a);
    ASSERT_NEAR(b.total, expect, 1e-12);
    ASSERT_NEAR(b.objective.item(), expect, 1e-12);
  }
}

TEST(TotalLoss, MissingStudentsAndBadWeights) {
  heads::LossTerms t;
  t.task = Tensor::scalar(2.0);
  auto b = heads::total_loss(t, {});
  EXPECT_EQ(b.total, 3.0);
  EXPECT_THROW(heads::total_loss(t, {1.0, -0.1, 0.0}), ContractError);
  EXPECT_THROW(heads::total_loss(heads::LossTerms{}, {}), ContractError);
}
