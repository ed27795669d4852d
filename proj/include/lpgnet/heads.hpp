#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lpgnet/params.hpp"
#include "lpgnet/tensor.hpp"

namespace lpgnet::heads {

struct LinearHead {
  Tensor weight;  // [d, C]
  Tensor bias;    // [C]
};

struct HeadParams {
  LinearHead teacher;
  LinearHead student_t;
  LinearHead student_a;
};

/// Registers "head.teacher.*" and, when with_students, "head.student_{t,a}.*".
HeadParams register_params(ParamStore& store, std::size_t d, std::size_t classes, bool with_students, Rng& rng);

struct Classification {
  Tensor logits;  // [..., C]
  Tensor probs;
};

Classification classify(const Tensor& features, const LinearHead& head);
/// Row-wise argmax of the last axis; ties go to the lowest class id.
std::vector<int> argmax_lastdim(const Tensor& x);

/// softmax(logits / tau). ContractError unless tau > 0.
Tensor soften(const Tensor& logits, double tau);

/// Mean negative log-likelihood of the true class over utterances whose label
/// is not kPadLabel. ContractError if there are none.
Tensor task_loss(const Tensor& probs, std::span<const int> labels);

struct StudentOutput {
  Tensor logits;
  Tensor probs;
  Tensor soft_probs;
};

/// Student logits = ReLU(h) W' + b'.
StudentOutput student_forward(const Tensor& h, const LinearHead& head, double tau);

enum class KlDirection { student_teacher, teacher_student };
std::string to_string(KlDirection d);
KlDirection parse_kl_direction(const std::string& s);

/// Mean over valid rows of sum_j p_j log(p_j / q_j).
Tensor kl_divergence(const Tensor& p, const Tensor& q, std::span<const int> labels);

struct DistillLosses {
  Tensor ce;
  Tensor kl;
};

/// Hard-label cross-entropy of the student plus KL between the softened
/// student and teacher distributions. teacher_soft should be detached.
DistillLosses distill_losses(const Tensor& student_soft, const Tensor& teacher_soft, const Tensor& student_probs,
                             std::span<const int> labels, KlDirection direction = KlDirection::student_teacher);

struct LossWeights {
  double task = 1.5;
  double ce = 1.0;
  double kl = 0.3;
};

/// Individual loss terms; student terms are undefined when that student is absent.
struct LossTerms {
  Tensor task;
  Tensor ce_t, ce_a;
  Tensor kl_t, kl_a;
};

struct LossBundle {
  double task = 0.0;
  double ce_t = 0.0, ce_a = 0.0;
  double kl_t = 0.0, kl_a = 0.0;
  double total = 0.0;
  LossWeights lambdas;
  /// Differentiable total. Terms with a zero weight are left out of the graph.
  Tensor objective;
};

/// total = l_task task + l_ce (ce_t + ce_a) + l_kl (kl_t + kl_a).
LossBundle total_loss(const LossTerms& terms, const LossWeights& lambdas);

}  // namespace lpgnet::heads
