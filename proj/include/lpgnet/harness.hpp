#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lpgnet/gradcheck.hpp"
#include "lpgnet/model.hpp"

namespace lpgnet {

// ---- whole-model gradient check ---------------------------------------------------

struct ModelGradCheckOptions {
  std::size_t d = 8;
  std::size_t u = 3;
  std::size_t b = 2;
  std::size_t classes = 4;
  std::size_t f_t = 5;
  std::size_t f_a = 6;
  double tau = 1.0;
  heads::LossWeights lambdas;
  Ablation ablation;
  /// Skip the student heads; only teacher-side parameters are compared.
  bool freeze_students = false;
  /// Flip the sign of the gate-weight gradient during the check.
  bool inject_gate_fault = false;
  std::uint64_t seed = 0;
  double eps = 1e-5;
  double threshold = 1e-3;
};

struct ModelGradCheckResult {
  GradCheckReport report;
  /// Worst relative error per parameter group ("lpia.tt", "fusion.gate", ...).
  std::vector<std::pair<std::string, double>> groups;
  bool passed = false;
  double seconds = 0.0;
};

/// Full objective (task + both students' CE and KL) with dropout off and
/// eval-mode batch-norm on randomised running statistics. The last dialogue
/// is one utterance shorter so padding is exercised.
ModelGradCheckResult model_gradcheck(const ModelGradCheckOptions& options);

/// Random dialogues of the given lengths with features ~ N(0, 1).
data::DialogueBatch random_batch(std::size_t f_t, std::size_t f_a, std::size_t classes,
                                 const std::vector<std::size_t>& lengths, std::uint64_t seed);

// ---- efficiency benchmark -------------------------------------------------------------

struct BenchOptions {
  std::vector<std::size_t> seq_lens{64};
  std::vector<std::size_t> dims{64};
  /// Timed runs per measurement; the median is reported. At least 3.
  std::size_t repeats = 5;
  std::size_t batch = 2;
  std::size_t classes = 4;
  std::size_t features = 64;
  std::uint64_t seed = 0;
};

struct BenchRow {
  std::string arch;
  std::size_t d = 0;
  std::size_t u = 0;
  std::size_t params = 0;
  double forward_ms = 0.0;
  double train_step_ms = 0.0;
};

/// One row per (U, d, arch), arch in {lpgnet, stacked}, d_ff = 2d.
std::vector<BenchRow> run_bench(const BenchOptions& options);
std::string bench_csv(const std::vector<BenchRow>& rows);

double median(std::vector<double> values);

}  // namespace lpgnet
