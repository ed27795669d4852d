#include "lpgnet/heads.hpp"

#include <algorithm>

#include "lpgnet/errors.hpp"

namespace lpgnet::heads {

HeadParams register_params(ParamStore& store, std::size_t d, std::size_t classes, bool with_students, Rng& rng) {
  if (classes < 2) throw ContractError("classifier needs at least 2 classes");
  auto head = [&](const std::string& name) {
    LinearHead h;
    h.weight = store.add("head." + name + ".weight", init_uniform({d, classes}, d, rng));
    h.bias = store.add("head." + name + ".bias", init_uniform({classes}, d, rng));
    return h;
  };
  HeadParams p;
  p.teacher = head("teacher");
  if (with_students) {
    p.student_t = head("student_t");
    p.student_a = head("student_a");
  }
  return p;
}

Classification classify(const Tensor& features, const LinearHead& head) {
  Tensor logits = linear(features, head.weight, head.bias);
  return {logits, softmax_lastdim(logits)};
}

std::vector<int> argmax_lastdim(const Tensor& x) {
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  std::vector<int> out(rows);
  const auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const auto first = v.begin() + static_cast<std::ptrdiff_t>(r * c);
    out[r] = static_cast<int>(std::max_element(first, first + static_cast<std::ptrdiff_t>(c)) - first);
  }
  return out;
}

Tensor soften(const Tensor& logits, double tau) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  return softmax_lastdim(tau == 1.0 ? logits : scale(logits, 1.0 / tau));
}

namespace {

std::vector<std::uint8_t> valid_rows(std::span<const int> labels) {
  std::vector<std::uint8_t> v(labels.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = labels[i] >= 0;
  return v;
}

}  // namespace

Tensor task_loss(const Tensor& probs, std::span<const int> labels) {
  const auto valid = valid_rows(labels);
  if (std::none_of(valid.begin(), valid.end(), [](auto v) { return v != 0; })) {
    throw ContractError("task loss over zero valid utterances");
  }
  return scale(masked_mean_all(select_lastdim(log(probs), labels), valid), -1.0);
}

StudentOutput student_forward(const Tensor& h, const LinearHead& head, double tau) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  Tensor logits = linear(relu(h), head.weight, head.bias);
  Tensor probs = softmax_lastdim(logits);
  // tau == 1 shares the exact same tensor so the two distributions are identical.
  Tensor soft = tau == 1.0 ? probs : soften(logits, tau);
  return {logits, probs, soft};
}

std::string to_string(KlDirection d) {
  return d == KlDirection::student_teacher ? "student_teacher" : "teacher_student";
}

KlDirection parse_kl_direction(const std::string& s) {
  if (s == "student_teacher") return KlDirection::student_teacher;
  if (s == "teacher_student") return KlDirection::teacher_student;
  throw ContractError("unknown kl_direction '" + s + "'");
}

Tensor kl_divergence(const Tensor& p, const Tensor& q, std::span<const int> labels) {
  if (p.shape() != q.shape()) {
    throw DimensionError("kl_divergence: shapes " + shape_str(p.shape()) + " and " + shape_str(q.shape()));
  }
  const auto valid = valid_rows(labels);
  Tensor per_row = sum_lastdim(mul(p, sub(log(p), log(q))));
  return masked_mean_all(per_row, valid);
}

DistillLosses distill_losses(const Tensor& student_soft, const Tensor& teacher_soft, const Tensor& student_probs,
                             std::span<const int> labels, KlDirection direction) {
  DistillLosses out;
  out.ce = task_loss(student_probs, labels);
  out.kl = direction == KlDirection::student_teacher ? kl_divergence(student_soft, teacher_soft, labels)
                                                     : kl_divergence(teacher_soft, student_soft, labels);
  return out;
}

LossBundle total_loss(const LossTerms& terms, const LossWeights& lambdas) {
  if (lambdas.task < 0 || lambdas.ce < 0 || lambdas.kl < 0) throw ContractError("loss weights must be non-negative");
  if (!terms.task.defined()) throw ContractError("total_loss: task term missing");
  LossBundle b;
  b.lambdas = lambdas;
  auto value = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  b.task = value(terms.task);
  b.ce_t = value(terms.ce_t);
  b.ce_a = value(terms.ce_a);
  b.kl_t = value(terms.kl_t);
  b.kl_a = value(terms.kl_a);

  Tensor objective;
  auto accumulate = [&](const Tensor& t, double weight) {
    if (!t.defined() || weight == 0.0) return;
    Tensor term = scale(t, weight);
    objective = objective.defined() ? add(objective, term) : term;
  };
  accumulate(terms.task, lambdas.task);
  accumulate(terms.ce_t, lambdas.ce);
  accumulate(terms.ce_a, lambdas.ce);
  accumulate(terms.kl_t, lambdas.kl);
  accumulate(terms.kl_a, lambdas.kl);
  b.objective = objective.defined() ? objective : scale(terms.task, 0.0);
  b.total = lambdas.task * b.task + lambdas.ce * (b.ce_t + b.ce_a) + lambdas.kl * (b.kl_t + b.kl_a);
  return b;
}

}  // namespace lpgnet::heads
