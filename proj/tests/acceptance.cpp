// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "lpgnet/baseline.hpp"
#include "lpgnet/checkpoint.hpp"
#include "lpgnet/fusion.hpp"
#include "lpgnet/harness.hpp"
#include "lpgnet/model.hpp"
#include "lpgnet/train.hpp"
#include "test_util.hpp"

using namespace lpgnet;
using namespace lpgnet::testing;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

ModelConfig tiny(std::size_t d, std::size_t f_t, std::size_t f_a) {
  ModelConfig c;
  c.f_t = f_t;
  c.f_a = f_a;
  c.d = d;
  c.d_ff = 2 * d;
  c.dropout = 0.0;
  return c;
}

// ---- 1 ------------------------------------------------------------------------------

void gradient_correctness() {
  const auto r = model_gradcheck({});
  const bool ok = r.report.max_rel_error < 1e-3 && r.seconds < 60.0;
  report(1, ok,
         "full-objective gradcheck max_rel_err=" + fmt("%.3e", r.report.max_rel_error) + " (< 1e-3) over " +
             std::to_string(r.report.coords_checked) + " coords in " + fmt("%.2f", r.seconds) + " s (< 60 s)");
}

// ---- 2 ------------------------------------------------------------------------------

void mask_correctness() {
  Rng rng(2, "acceptance.mask");
  double worst_weight = 0.0, worst_logit = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng.below(3), u = 2 + rng.below(6), d = 4 + 2 * rng.below(3);
    std::vector<std::size_t> lengths(b);
    for (auto& l : lengths) l = 1 + rng.below(u);
    lengths[rng.below(b)] = u;
    auto batch = random_batch(5, 6, 4, lengths, 1000 + trial);
    LpgNet model(tiny(d, 5, 6), 2000 + trial);
    for (auto& s : model.bn_states())
      for (auto& v : s.running_var) v = rng.uniform(0.5, 1.5);

    const auto clean = model.forward(batch, {});
    auto noisy = batch;
    noisy.text = Tensor(batch.text.shape(), to_vec(batch.text));
    noisy.audio = Tensor(batch.audio.shape(), to_vec(batch.audio));
    auto tv = noisy.text.mutable_data();
    auto av = noisy.audio.mutable_data();
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t t = lengths[s]; t < u; ++t) {
        for (std::size_t k = 0; k < 5; ++k) tv[(s * u + t) * 5 + k] = 100.0 * rng.normal();
        for (std::size_t k = 0; k < 6; ++k) av[(s * u + t) * 6 + k] = 100.0 * rng.normal();
      }
    const auto perturbed = model.forward(noisy, {});
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t t = 0; t < lengths[s]; ++t)
        for (std::size_t c = 0; c < 4; ++c) {
          const std::size_t i = (s * u + t) * 4 + c;
          worst_logit = std::max(worst_logit, std::abs(clean.logits[i] - perturbed.logits[i]));
        }

    const auto& lp = model.lpia_params();
    const Tensor x_t = lpia::project_conv1d(noisy.text, lp.proj_t);
    const Tensor x_a = lpia::project_conv1d(noisy.audio, lp.proj_a);
    for (const auto& [q, k] : {std::pair{x_t, x_t}, std::pair{x_a, x_a}, std::pair{x_a, x_t}, std::pair{x_t, x_a}}) {
      const auto attn = lpia::masked_attention(q, k, k, batch.mask);
      for (std::size_t s = 0; s < b; ++s)
        for (std::size_t i = 0; i < u; ++i) {
          double hidden = 0.0;
          for (std::size_t j = lengths[s]; j < u; ++j) hidden += attn.weights[(s * u + i) * u + j];
          worst_weight = std::max(worst_weight, hidden);
        }
    }
  }
  report(2, worst_weight < 1e-30 && worst_logit < 1e-6,
         "100 configs: max masked attention mass=" + fmt("%.1e", worst_weight) +
             " (< 1e-30), max valid-logit change under padding noise=" + fmt("%.1e", worst_logit) + " (< 1e-6)");
}

// ---- 3 ------------------------------------------------------------------------------

void fusion_algebra() {
  Rng rng(3, "acceptance.fusion");
  double sum_err = 0.0, bound_err = 0.0;
  bool gate_open = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t rows = 1 + rng.below(6), d = 1 + rng.below(8);
    Tensor t = rand_tensor({1, rows, d}, rng), a = rand_tensor({1, rows, d}, rng);
    Tensor w = rand_tensor({d, 1}, rng);
    const auto f = fusion::multimodal_fuse(t, a, w);
    for (std::size_t r = 0; r < rows; ++r) {
      sum_err = std::max(sum_err, std::abs(f.alpha_t[r] + f.alpha_a[r] - 1.0));
      for (std::size_t k = 0; k < d; ++k) {
        const std::size_t i = r * d + k;
        const double lo = std::min(t[i], a[i]), hi = std::max(t[i], a[i]);
        bound_err = std::max({bound_err, lo - f.f_final[i], f.f_final[i] - hi});
      }
    }
    // Gate values Z = sigmoid(H W_g), recovered from the gated output where H != 0.
    Tensor h = rand_tensor({rows, d}, rng);
    Tensor wg = rand_tensor({d, d}, rng);
    const Tensor g = fusion::gated_fusion(h, wg);
    for (std::size_t i = 0; i < h.numel(); ++i) {
      if (std::abs(h[i]) < 1e-3) continue;
      const double z = g[i] / h[i];
      gate_open = gate_open && z > 0.0 && z < 1.0;
    }
  }
  report(3, sum_err <= 1e-12 && bound_err <= 1e-12 && gate_open,
         "1000 cases: max |alpha_T+alpha_A-1|=" + fmt("%.1e", sum_err) + ", max bound violation=" +
             fmt("%.1e", std::max(0.0, bound_err)) + ", gate in (0,1): " + (gate_open ? "yes" : "no"));
}

// ---- 4 ------------------------------------------------------------------------------

void loss_identities() {
  bool identity = true, kl_ok = true, tau_ok = true;
  double worst_identity = 0.0, min_kl = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    LpgNet model(tiny(8, 5, 6), 300 + trial);
    const auto batch = random_batch(5, 6, 4, {4, 3}, 400 + trial);
    const auto out = model.forward(batch, {Mode::eval, true, 0});
    const heads::LossWeights w;
    const auto b = model.loss(out, batch, w);
    const double expect = w.task * b.task + w.ce * (b.ce_t + b.ce_a) + w.kl * (b.kl_t + b.kl_a);
    worst_identity = std::max(worst_identity, std::abs(b.total - expect));
    min_kl = std::min({min_kl, b.kl_t, b.kl_a});
    for (const auto* s : {&*out.student_t, &*out.student_a}) tau_ok = tau_ok && to_vec(s->soft_probs) == to_vec(s->probs);
  }
  identity = worst_identity <= 1e-12;
  kl_ok = min_kl >= -1e-12;

  TrainConfig tc;
  tc.lambdas = {1.5, 0.0, 0.0};
  ModelConfig with = tiny(8, 5, 6);
  with.dropout = 0.1;
  ModelConfig without = with;
  without.with_students = false;
  LpgNet a(with, 7), b(without, 7);
  Adam oa(a.params(), AdamOptions{1e-2}), ob(b.params(), AdamOptions{1e-2});
  bool same = true;
  for (int step = 0; step < 10; ++step) {
    const auto batch = random_batch(5, 6, 4, {4, 3, 2}, 500 + step);
    same = same && train_step(a, oa, batch, tc, step).total == train_step(b, ob, batch, tc, step).total;
    for (const auto& name : b.params().names()) {
      const auto pa = a.params().get(name).data(), pb = b.params().get(name).data();
      same = same && std::equal(pa.begin(), pa.end(), pb.begin(), pb.end());
    }
  }
  report(4, identity && kl_ok && tau_ok && same,
         "max |total - weighted sum|=" + fmt("%.1e", worst_identity) + ", min KL=" + fmt("%.1e", min_kl) +
             ", tau=1 soft==hard bitwise: " + (tau_ok ? "yes" : "no") +
             ", lambda_CE=lambda_KL=0 matches students-free build for 10 steps: " + (same ? "yes" : "no"));
}

// ---- 5 ------------------------------------------------------------------------------

TrainConfig desk_run(std::uint64_t seed, const std::string& ablation = "full") {
  TrainConfig c = TrainConfig::desk();
  c.epochs = 50;
  c.seed = seed;
  c.ablation = Ablation::parse(ablation);
  return c;
}

void learnability() {
  data::SynthSpec spec;
  spec.mode = data::ModalityMode::both;
  const auto split = data::synth_generate(spec, 1);
  const auto t0 = Clock::now();
  const auto r = train(desk_run(1), split);
  const double secs = since(t0);
  report(5, r.test->accuracy >= 0.95 && secs < 300.0,
         "'both' set, d=64, 100 train dialogues, 50 epochs: test accuracy " + fmt("%.4f", r.test->accuracy) +
             " (>= 0.95) in " + fmt("%.1f", secs) + " s (< 300 s)");
}

// ---- 6 and 7 ------------------------------------------------------------------------

void complementary() {
  data::SynthSpec spec;
  spec.mode = data::ModalityMode::complementary;
  const auto split = data::synth_generate(spec, 1);
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  const std::vector<std::string> variants{"full",   "text_only",          "audio_only",   "no_inter_attention",
                                          "no_intra_attention", "no_ffn", "no_dual_gate"};
  std::vector<std::vector<double>> acc(variants.size());
  for (std::size_t v = 0; v < variants.size(); ++v)
    for (auto s : seeds) acc[v].push_back(train(desk_run(s, variants[v]), split).test->accuracy);

  auto mean = [](const std::vector<double>& x) {
    double m = 0.0;
    for (double v : x) m += v / static_cast<double>(x.size());
    return m;
  };
  std::printf("complementary set, test accuracy over seeds 1,2,3 (%zu test utterances)\n",
              data::utterance_count(split.test));
  std::printf("  %-20s %8s %8s %8s %8s %10s\n", "variant", "seed1", "seed2", "seed3", "mean", "mean|d|pp");
  std::vector<double> mean_abs_delta(variants.size(), 0.0);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    for (std::size_t i = 0; i < seeds.size(); ++i)
      mean_abs_delta[v] += std::abs(acc[v][i] - acc[0][i]) * 100.0 / static_cast<double>(seeds.size());
    std::printf("  %-20s %8.4f %8.4f %8.4f %8.4f %10.2f\n", variants[v].c_str(), acc[v][0], acc[v][1], acc[v][2],
                mean(acc[v]), mean_abs_delta[v]);
  }

  const double full = mean(acc[0]), text = mean(acc[1]), audio = mean(acc[2]);
  const double margin = (full - std::max(text, audio)) * 100.0;
  report(6, margin >= 10.0,
         "mean full " + fmt("%.4f", full) + " vs text_only " + fmt("%.4f", text) + " / audio_only " +
             fmt("%.4f", audio) + ": margin " + fmt("%.1f", margin) + " pp (>= 10 pp)");

  bool all = true;
  std::string detail;
  for (std::size_t v = 3; v < variants.size(); ++v) {
    all = all && mean_abs_delta[v] >= 0.5;
    detail += (detail.empty() ? "" : ", ") + variants[v] + " " + fmt("%.2f", mean_abs_delta[v]);
  }
  report(7, all, "mean |delta accuracy| vs full in pp (>= 0.5 each): " + detail);
}

// ---- 8 ------------------------------------------------------------------------------

void lightweight() {
  bool smaller = true;
  std::string detail;
  for (std::size_t d : {64, 256, 768}) {
    const ModelConfig c = tiny(d, 64, 64);
    const std::size_t block = LpgNet(c, 1).param_count().group("lpia.block");
    const std::size_t stacked = StackedTransformer(c, 1).param_count().group("stacked.encoders");
    smaller = smaller && block < stacked;
    detail += "d=" + std::to_string(d) + " " + std::to_string(block) + " < " + std::to_string(stacked) + "; ";
  }
  BenchOptions bo;
  bo.seq_lens = {64};
  bo.dims = {64};
  const auto rows = run_bench(bo);
  for (const auto& r : rows)
    detail += r.arch + " fwd " + fmt("%.2f", r.forward_ms) + " ms, step " + fmt("%.2f", r.train_step_ms) + " ms; ";
  const bool faster = rows.size() == 2 && rows[0].arch == "lpgnet" && rows[0].forward_ms < rows[1].forward_ms;
  detail += std::string("lpgnet forward faster at U=64: ") + (faster ? "yes" : "no") + " (reported, not gated)";
  report(8, smaller, "LPIA block vs 2 encoder layers per modality: " + detail);
}

// ---- 9 ------------------------------------------------------------------------------

void determinism() {
  data::SynthSpec spec;
  spec.f_t = spec.f_a = 16;
  spec.train_dialogues = 30;
  spec.validation_dialogues = 8;
  spec.test_dialogues = 10;
  const auto split = data::synth_generate(spec, 9);
  TrainConfig c = TrainConfig::desk();
  c.hidden = 32;
  c.d_ff = 64;
  c.epochs = 5;
  c.seed = 9;
  const auto a = train(c, split), b = train(c, split);
  bool same = a.history.size() == b.history.size();
  for (std::size_t e = 0; same && e < a.history.size(); ++e) {
    same = a.history[e].train_loss == b.history[e].train_loss &&
           a.history[e].validation_macro_f1 == b.history[e].validation_macro_f1 &&
           a.history[e].validation_accuracy == b.history[e].validation_accuracy;
  }
  std::stringstream ss;
  write_checkpoint(ss, Checkpoint::capture(*a.model, c.to_json(), a.best_epoch, a.history));
  auto restored = read_checkpoint(ss).instantiate();
  const bool round_trip =
      evaluate(*restored, split.test).to_json() == evaluate(*a.model, split.test).to_json() &&
      restored->params().snapshot() == a.model->params().snapshot();
  report(9, same && round_trip,
         std::string("identical-seed histories bitwise equal: ") + (same ? "yes" : "no") +
             ", checkpoint round-trip evaluation bitwise equal: " + (round_trip ? "yes" : "no"));
}

// ---- 10 -----------------------------------------------------------------------------

void metric_harness() {
  const std::vector<int> pred{0, 0, 1, 1, 1, 1}, label{0, 0, 0, 1, 1, 1};
  const auto r = metrics_from_confusion(confusion_matrix(pred, label, 2));
  bool ok = r.confusion == ConfusionMatrix{{2, 1}, {0, 3}} && r.accuracy == 5.0 / 6.0 &&
            std::abs(r.per_class[0].f1 - 0.8) < 1e-15 && std::abs(r.per_class[1].f1 - 6.0 / 7.0) < 1e-15 &&
            std::abs(r.macro_f1 - (0.8 + 6.0 / 7.0) / 2.0) < 1e-15;

  std::string counts;
  for (std::size_t classes : {4, 6}) {
    data::SynthSpec spec;
    spec.classes = classes;
    spec.f_t = spec.f_a = 8;
    spec.train_dialogues = 12;
    spec.validation_dialogues = 4;
    spec.test_dialogues = 10;
    const auto split = data::synth_generate(spec, classes);
    TrainConfig c = TrainConfig::desk();
    c.hidden = 16;
    c.d_ff = 32;
    c.epochs = 2;
    const auto t = train(c, split);
    const auto m = evaluate(*t.model, split.test, 4);
    const auto p = predict(*t.model, split.test);
    // Direct counting oracle over the same predictions.
    std::size_t correct = 0;
    for (std::size_t i = 0; i < p.predicted.size(); ++i) correct += p.predicted[i] == p.labels[i];
    ok = ok && m.num_classes == classes && m.per_class.size() == classes &&
         m.accuracy == static_cast<double>(correct) / static_cast<double>(p.labels.size()) &&
         m.total == data::utterance_count(split.test);
    counts += " C=" + std::to_string(classes) + " ok";
  }
  report(10, ok, "hand-computed [[2,1],[0,3]] case exact (acc 5/6, F1 0.8 and 6/7);" + counts);
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  const std::vector<std::function<void()>> criteria{gradient_correctness, mask_correctness, fusion_algebra,
                                                    loss_identities,      learnability,     complementary,
                                                    lightweight,          determinism,      metric_harness};
  for (const auto& run : criteria) {
    try {
      run();
    } catch (const std::exception& e) {
      std::printf("FAIL criterion ?: exception %s\n", e.what());
      ++failures;
    }
  }
  std::printf("acceptance finished in %.1f s, %d failing\n", since(t0), failures);
  return failures == 0 ? 0 : 1;
}
