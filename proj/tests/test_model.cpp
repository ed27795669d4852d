#include <gtest/gtest.h>

#include <sstream>

#include "lpgnet/baseline.hpp"
#include "lpgnet/checkpoint.hpp"
#include "lpgnet/errors.hpp"
#include "lpgnet/harness.hpp"
#include "lpgnet/model.hpp"
#include "lpgnet/parallel.hpp"
#include "lpgnet/train.hpp"
#include "test_util.hpp"

using namespace lpgnet;
using namespace lpgnet::testing;

namespace {

ModelConfig small_config(std::size_t d = 8, std::size_t f_t = 5, std::size_t f_a = 6) {
  ModelConfig c;
  c.f_t = f_t;
  c.f_a = f_a;
  c.classes = 4;
  c.d = d;
  c.d_ff = 2 * d;
  c.dropout = 0.0;
  return c;
}

// Enumeration oracle for LPGNet's learnable scalars.
std::size_t lpgnet_params(std::size_t f_t, std::size_t f_a, std::size_t d, std::size_t d_ff, std::size_t c,
                          bool students) {
  const std::size_t proj = (f_t + 1) * d + (f_a + 1) * d;
  const std::size_t path = (d * d + d) + 2 * d + 2 * d + d * d_ff + d_ff * d;
  const std::size_t fusion = 4 * d * d + 2 * (2 * d * d + d) + d;
  const std::size_t head = d * c + c;
  return proj + 4 * path + fusion + head * (students ? 3 : 1);
}

// One post-norm encoder layer: Q/K/V/O with biases, FFN with biases, two layer norms.
std::size_t encoder_layer_params(std::size_t d, std::size_t d_ff) {
  return 4 * (d * d + d) + (d * d_ff + d_ff) + (d_ff * d + d) + 4 * d;
}

std::vector<data::Dialogue> random_dialogues(const std::vector<std::size_t>& lengths, std::size_t f_t,
                                             std::size_t f_a, Rng& rng) {
  std::vector<data::Dialogue> out;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    data::Dialogue d{"d" + std::to_string(i), {}};
    for (std::size_t t = 0; t < lengths[i]; ++t) {
      d.utterances.push_back({randn(f_t, rng), randn(f_a, rng), static_cast<int>(rng.below(4))});
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::vector<double> all_params(const Model& m) {
  std::vector<double> v;
  for (const auto& p : m.params().snapshot()) v.insert(v.end(), p.begin(), p.end());
  return v;
}

}  // namespace

// ---- ablation flags ---------------------------------------------------------------

TEST(Ablation, NameRoundTrip) {
  EXPECT_EQ(Ablation{}.name(), "full");
  EXPECT_EQ(Ablation::parse("full"), Ablation{});
  Ablation a = Ablation::parse("no_ffn+no_dual_gate");
  EXPECT_TRUE(a.no_ffn && a.no_dual_gate);
  EXPECT_EQ(Ablation::parse(a.name()), a);
  for (const char* s : {"no_inter_attention", "no_intra_attention", "text_only", "audio_only"})
    EXPECT_EQ(Ablation::parse(s).name(), s);
}

TEST(Ablation, RejectsUnknownAndContradictory) {
  EXPECT_THROW(Ablation::parse("no_everything"), ContractError);
  EXPECT_THROW(Ablation::parse("text_only+audio_only"), ContractError);
  EXPECT_THROW(Ablation::parse("no_inter_attention+no_intra_attention"), ContractError);
  EXPECT_THROW(Ablation::parse("text_only+no_intra_attention"), ContractError);
}

TEST(ModelConfig, JsonRoundTrip) {
  ModelConfig c = small_config();
  c.ablation = Ablation::parse("no_ffn");
  c.tau = 2.0;
  c.kl_direction = heads::KlDirection::teacher_student;
  const auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
}

// ---- parameter accounting -----------------------------------------------------------

TEST(ParamCount, MatchesEnumerationOracleAtDeskScale) {
  ModelConfig c = small_config(64, 64, 64);
  LpgNet m(c, 1);
  const auto pc = m.param_count();
  EXPECT_EQ(pc.total, lpgnet_params(64, 64, 64, 128, 4, true));
  EXPECT_EQ(pc.total, 125260u);
  EXPECT_EQ(pc.group("lpia.block"), 83200u);
  EXPECT_EQ(pc.group("lpia.tt"), 20800u);
  EXPECT_EQ(pc.group("lpia.proj"), 8320u);
  EXPECT_EQ(pc.group("fusion.gates"), 16384u);
  EXPECT_EQ(pc.group("head.students"), 520u);
  EXPECT_EQ(pc.inference_total, pc.total - 520u);
  std::size_t sum = 0;
  for (const char* g : {"lpia.proj", "lpia.block", "fusion.gates", "fusion.proj", "fusion.score", "head.teacher",
                        "head.students"})
    sum += pc.group(g);
  EXPECT_EQ(sum, pc.total);
  EXPECT_THROW(pc.group("nope"), ContractError);
}

TEST(ParamCount, WithoutStudents) {
  ModelConfig c = small_config(16, 7, 9);
  c.with_students = false;
  LpgNet m(c, 1);
  EXPECT_EQ(m.param_count().total, lpgnet_params(7, 9, 16, 32, 4, false));
  EXPECT_EQ(m.param_count().total, m.param_count().inference_total);
}

TEST(ParamCount, SmallScaleLinearAndGate) {
  // d = 8, C = 4: the teacher head is 8*4+4 = 36 and one gate is 8*8 = 64.
  LpgNet m(small_config(), 1);
  EXPECT_EQ(m.param_count().group("head.teacher"), 36u);
  EXPECT_EQ(m.params().get("fusion.gate.tt").numel(), 64u);
}

TEST(ParamCount, StackedBaselineMatchesOracle) {
  ModelConfig c = small_config(64, 64, 64);
  StackedTransformer s(c, 1);
  EXPECT_EQ(encoder_layer_params(64, 128), 33472u);
  EXPECT_EQ(s.param_count().group("stacked.encoders"), 4 * 33472u);
  EXPECT_EQ(s.param_count().group("stacked.encoders"), 133888u);
}

TEST(ParamCount, LpiaBlockSmallerThanStackedEncoders) {
  for (std::size_t d : {64, 256, 768}) {
    const std::size_t path = (d * d + d) + 4 * d + 2 * d * 2 * d;
    const std::size_t block = 4 * path;
    const std::size_t stacked = 2 * StackedTransformer::kLayers * encoder_layer_params(d, 2 * d);
    EXPECT_LT(block, stacked) << "d=" << d;
  }
  // The measured models agree with the oracle at the smallest size.
  LpgNet l(small_config(64, 64, 64), 1);
  StackedTransformer s(small_config(64, 64, 64), 1);
  EXPECT_LT(l.param_count().group("lpia.block"), s.param_count().group("stacked.encoders"));
}

// ---- forward ------------------------------------------------------------------------

TEST(Forward, ShapesAndOptionalParts) {
  LpgNet m(small_config(), 2);
  auto batch = random_batch(5, 6, 4, {3, 2}, 1);
  auto out = m.forward(batch, {Mode::eval, true, 0});
  EXPECT_EQ(out.logits.shape(), (Shape{2, 3, 4}));
  ASSERT_TRUE(out.student_t && out.student_a && out.fused && out.lpia);
  EXPECT_EQ(out.fused->alpha_t.shape(), (Shape{2, 3}));
  auto infer = m.forward(batch, {});
  EXPECT_FALSE(infer.student_t.has_value());
  EXPECT_FALSE(infer.teacher_soft.defined());
  EXPECT_EQ(to_vec(infer.logits), to_vec(out.logits));
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 4; ++j) s += out.probs[r * 4 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Forward, RejectsMismatchedBatches) {
  LpgNet m(small_config(), 2);
  EXPECT_THROW(m.forward(random_batch(4, 6, 4, {2}, 1), {}), DimensionError);
  auto batch = random_batch(5, 6, 4, {2}, 1);
  batch.labels[0] = 7;
  EXPECT_THROW(m.forward(batch, {}), SchemaError);
}

TEST(Forward, TextOnlyIgnoresAudio) {
  ModelConfig c = small_config();
  c.ablation = Ablation::parse("text_only");
  LpgNet m(c, 3);
  auto a = random_batch(5, 6, 4, {3, 3}, 1);
  auto b = a;
  Rng rng(3, "noise");
  b.audio = rand_tensor(a.audio.shape(), rng);
  EXPECT_EQ(to_vec(m.forward(a, {}).logits), to_vec(m.forward(b, {}).logits));
  EXPECT_FALSE(m.forward(a, {Mode::eval, true, 0}).student_a.has_value());
}

TEST(Forward, AudioOnlyIgnoresText) {
  ModelConfig c = small_config();
  c.ablation = Ablation::parse("audio_only");
  LpgNet m(c, 3);
  auto a = random_batch(5, 6, 4, {3, 3}, 1);
  auto b = a;
  Rng rng(4, "noise");
  b.text = rand_tensor(a.text.shape(), rng);
  EXPECT_EQ(to_vec(m.forward(a, {}).logits), to_vec(m.forward(b, {}).logits));
}

TEST(Forward, AblationsChangeOutputs) {
  auto batch = random_batch(5, 6, 4, {3, 3}, 1);
  const auto full = to_vec(LpgNet(small_config(), 5).forward(batch, {}).logits);
  for (const char* name : {"no_inter_attention", "no_intra_attention", "no_ffn", "no_dual_gate", "text_only",
                           "audio_only"}) {
    ModelConfig c = small_config();
    c.ablation = Ablation::parse(name);
    LpgNet m(c, 5);
    EXPECT_EQ(m.param_count().total, LpgNet(small_config(), 5).param_count().total) << name;
    EXPECT_NE(to_vec(m.forward(batch, {}).logits), full) << name;
  }
}

TEST(Forward, PaddingInvariance) {
  // Property: a dialogue's logits do not depend on how much padding surrounds it,
  // nor on what the padded slots contain.
  Rng rng(6, "pad");
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t len = 1 + rng.below(4);
    const std::size_t other = len + 1 + rng.below(4);
    ModelConfig c = small_config(4 + 2 * rng.below(3), 3, 4);
    for (auto& flag : {&Ablation::no_ffn, &Ablation::no_dual_gate})
      if (rng.below(3) == 0) c.ablation.*flag = true;
    LpgNet m(c, 100 + trial);
    for (auto& s : m.bn_states())
      for (auto& v : s.running_mean) v = rng.uniform(-0.5, 0.5);
    auto dialogues = random_dialogues({len, other}, 3, 4, rng);
    const auto alone = m.forward(data::make_batch(std::span(dialogues).first(1)), {});
    auto padded_batch = data::make_batch(dialogues);
    auto noisy_batch = data::make_batch(dialogues);
    const std::size_t u = noisy_batch.max_len();
    auto text = noisy_batch.text.mutable_data();
    auto audio = noisy_batch.audio.mutable_data();
    for (std::size_t t = len; t < u; ++t) {
      for (std::size_t k = 0; k < 3; ++k) text[t * 3 + k] = 100.0 * rng.normal();
      for (std::size_t k = 0; k < 4; ++k) audio[t * 4 + k] = 100.0 * rng.normal();
    }
    const auto padded = m.forward(padded_batch, {});
    const auto noisy = m.forward(noisy_batch, {});
    for (std::size_t i = 0; i < len * 4; ++i) {
      ASSERT_NEAR(padded.logits[i], alone.logits[i], 1e-12) << "trial " << trial;
      ASSERT_NEAR(noisy.logits[i], alone.logits[i], 1e-12) << "trial " << trial;
    }
  }
}

TEST(Forward, DeterministicInSeed) {
  auto batch = random_batch(5, 6, 4, {3, 2}, 9);
  EXPECT_EQ(to_vec(LpgNet(small_config(), 7).forward(batch, {}).logits),
            to_vec(LpgNet(small_config(), 7).forward(batch, {}).logits));
  EXPECT_NE(all_params(LpgNet(small_config(), 7)), all_params(LpgNet(small_config(), 8)));
}

TEST(Forward, ThreadCountDoesNotChangeTraining) {
  TrainConfig tc;
  tc.learning_rate = 1e-2;
  auto batch = random_batch(5, 6, 4, {3, 2, 3}, 10);
  const std::size_t before = max_threads();
  auto run = [&](std::size_t threads) {
    set_max_threads(threads);
    ModelConfig c = small_config();
    c.dropout = 0.2;
    LpgNet m(c, 11);
    Adam opt(m.params(), {tc.learning_rate});
    for (int s = 0; s < 3; ++s) train_step(m, opt, batch, tc, 40 + s);
    auto v = all_params(m);
    for (const auto& [name, b] : m.buffers()) v.insert(v.end(), b.begin(), b.end());
    return v;
  };
  const auto one = run(1);
  EXPECT_EQ(one, run(4));
  set_max_threads(before);
}

// ---- losses through the model ---------------------------------------------------------

TEST(ModelLoss, ZeroDistillationWeightsMatchStudentFreeBuild) {
  TrainConfig tc;
  tc.lambdas = {1.5, 0.0, 0.0};
  tc.learning_rate = 5e-3;
  ModelConfig with = small_config();
  with.dropout = 0.1;
  ModelConfig without = with;
  without.with_students = false;
  LpgNet a(with, 12), b(without, 12);
  Adam oa(a.params(), {tc.learning_rate}), ob(b.params(), {tc.learning_rate});
  for (int s = 0; s < 4; ++s) {
    auto batch = random_batch(5, 6, 4, {3, 2, 2}, 50 + s);
    const auto la = train_step(a, oa, batch, tc, 70 + s);
    const auto lb = train_step(b, ob, batch, tc, 70 + s);
    EXPECT_EQ(la.total, lb.total);
    for (const auto& name : b.params().names()) {
      const auto pa = a.params().get(name).data(), pb = b.params().get(name).data();
      ASSERT_TRUE(std::equal(pa.begin(), pa.end(), pb.begin(), pb.end())) << name << " step " << s;
    }
  }
}

TEST(ModelLoss, KlAloneLeavesTeacherWithoutGradient) {
  LpgNet m(small_config(), 13);
  auto batch = random_batch(5, 6, 4, {3, 3}, 13);
  auto out = m.forward(batch, {Mode::eval, true, 0});
  auto bundle = m.loss(out, batch, {0.0, 0.0, 1.0});
  backward(bundle.objective);
  EXPECT_FALSE(m.params().get("head.teacher.weight").has_grad());
  EXPECT_TRUE(m.params().get("head.student_t.weight").has_grad());
  EXPECT_GE(bundle.kl_t, -1e-12);
  EXPECT_GE(bundle.kl_a, -1e-12);
}

TEST(ModelLoss, BundleIdentityHolds) {
  LpgNet m(small_config(), 14);
  auto batch = random_batch(5, 6, 4, {3, 2}, 14);
  auto out = m.forward(batch, {Mode::eval, true, 0});
  const heads::LossWeights w;
  auto b = m.loss(out, batch, w);
  EXPECT_NEAR(b.total, w.task * b.task + w.ce * (b.ce_t + b.ce_a) + w.kl * (b.kl_t + b.kl_a), 1e-12);
  EXPECT_NEAR(b.objective.item(), b.total, 1e-12);
  // Unit temperature: softened student equals its plain distribution.
  EXPECT_EQ(out.student_t->soft_probs.node(), out.student_t->probs.node());
}

TEST(ModelLoss, FullObjectiveGradientCheck) {
  ModelGradCheckOptions o;
  const auto r = model_gradcheck(o);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.report.max_rel_error, 1e-3) << r.report.worst_param;
  o.inject_gate_fault = true;
  EXPECT_FALSE(model_gradcheck(o).passed);
}

// ---- checkpoints ------------------------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitwise) {
  for (const char* arch : {"lpgnet", "stacked"}) {
    ModelConfig c = small_config();
    c.ablation = std::string(arch) == "lpgnet" ? Ablation::parse("no_dual_gate") : Ablation{};
    auto m = make_model(arch, c, 15);
    TrainConfig tc;
    auto batch = random_batch(5, 6, 4, {3, 3}, 15);
    Adam opt(m->params(), {1e-2});
    train_step(*m, opt, batch, tc, 1);
    std::vector<EpochRecord> history{{1, 1.25, 1.0, 0.5, 0.4, 0.45, 0.0}};
    auto ck = Checkpoint::capture(*m, tc.to_json(), 1, history);
    std::stringstream ss;
    write_checkpoint(ss, ck);
    auto back = read_checkpoint(ss);
    EXPECT_EQ(back.arch, arch);
    EXPECT_EQ(back.epoch, 1u);
    EXPECT_EQ(back.history.size(), 1u);
    EXPECT_EQ(back.history[0].train_loss, 1.25);
    auto restored = back.instantiate();
    EXPECT_EQ(all_params(*restored), all_params(*m));
    EXPECT_EQ(restored->buffers(), m->buffers());
    EXPECT_EQ(restored->config().to_json(), m->config().to_json());
    EXPECT_EQ(to_vec(restored->forward(batch, {}).logits), to_vec(m->forward(batch, {}).logits));
  }
}

TEST(Checkpoint, RejectsCorruptInput) {
  LpgNet m(small_config(), 16);
  std::stringstream ss;
  write_checkpoint(ss, Checkpoint::capture(m, {}, 0, {}));
  const std::string bytes = ss.str();

  std::stringstream bad_magic("NOTACKPT" + bytes.substr(8));
  EXPECT_THROW(read_checkpoint(bad_magic), SchemaError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 8));
  EXPECT_THROW(read_checkpoint(truncated), SchemaError);

  auto ck = Checkpoint::capture(m, {}, 0, {});
  ck.tensors.pop_back();
  EXPECT_THROW(ck.instantiate(), SchemaError);
  auto ck2 = Checkpoint::capture(m, {}, 0, {});
  ck2.buffers.begin()->second.pop_back();
  EXPECT_THROW(ck2.instantiate(), SchemaError);
}

TEST(MakeModel, UnknownArchitectureAndBadDimensions) {
  EXPECT_THROW(make_model("rnn", small_config(), 1), ContractError);
  ModelConfig c = small_config();
  c.d_ff = 3 * c.d;
  EXPECT_THROW(make_model("lpgnet", c, 1), ContractError);
  c = small_config();
  c.f_t = 0;
  EXPECT_THROW(make_model("lpgnet", c, 1), ContractError);
}
