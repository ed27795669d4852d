#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lpgnet/data.hpp"
#include "lpgnet/heads.hpp"
#include "lpgnet/metrics.hpp"
#include "lpgnet/model.hpp"
#include "lpgnet/optim.hpp"

namespace lpgnet {

struct TrainConfig {
  std::string arch = "lpgnet";
  double learning_rate = 3e-4;
  std::size_t batch_size = 32;
  std::size_t hidden = 768;
  /// 0 means 2 * hidden.
  std::size_t d_ff = 0;
  std::size_t epochs = 150;
  double weight_decay = 1e-5;
  double dropout = 0.1;
  double tau = 1.0;
  heads::LossWeights lambdas;
  std::uint64_t seed = 0;
  Ablation ablation;
  bool with_students = true;
  heads::KlDirection kl_direction = heads::KlDirection::student_teacher;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm cap; 0 disables clipping.
  double clip_norm = 0.0;
  /// Share of the training pool held out when no validation split is given.
  double validation_fraction = 0.1;

  /// Desk-scale preset: hidden 64, d_ff 128, everything else at defaults.
  static TrainConfig desk();

  std::size_t resolved_d_ff() const { return d_ff == 0 ? 2 * hidden : d_ff; }
  /// ContractError on out-of-range values.
  void validate() const;

  /// Flat key/value form. from_json starts from base and overrides the keys
  /// present; unknown keys raise SchemaError.
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j);
};

ModelConfig model_config(const TrainConfig& config, const data::FeatureHeader& header);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double train_task = 0.0;
  double validation_accuracy = 0.0;
  double validation_macro_f1 = 0.0;
  double validation_weighted_f1 = 0.0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
  static EpochRecord from_json(const nlohmann::json& j);
};

/// One row per epoch, with a header line. Timing is omitted when with_time is false.
std::string history_csv(std::span<const EpochRecord> history, bool with_time = true);

/// Training order for one epoch: dialogue indices chunked into batches of at
/// most batch_size. A trailing singleton joins the previous batch because
/// batch-norm training needs two rows.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dialogues, std::size_t batch_size,
                                                    std::uint64_t seed, std::size_t epoch);

struct TrainResult {
  std::unique_ptr<Model> model;  // weights of the best validation epoch
  TrainConfig config;
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  MetricsReport best_validation;
  std::optional<MetricsReport> test;
  double seconds = 0.0;
};

using EpochObserver = std::function<void(const EpochRecord&)>;

/// Deterministic in config.seed. Throws DivergenceError on a non-finite loss,
/// ContractError when the train or validation split is empty.
TrainResult train(const TrainConfig& config, const data::DatasetSplit& split, const EpochObserver& observer = {});

/// Lower-level step used by train(): forward, loss, backward, optional clip,
/// Adam. Returns the loss bundle of the step.
heads::LossBundle train_step(Model& model, Adam& optimizer, const data::DialogueBatch& batch,
                             const TrainConfig& config, std::uint64_t dropout_seed);

struct Predictions {
  std::vector<int> predicted;
  std::vector<int> labels;
};

/// Eval-mode argmax over every valid utterance, in dialogue order.
Predictions predict(Model& model, std::span<const data::Dialogue> dialogues, std::size_t batch_size = 32);

/// ContractError on an empty set; SchemaError when a label exceeds the model's classes.
/// Shards batches across max_threads() workers and merges confusion matrices.
MetricsReport evaluate(Model& model, std::span<const data::Dialogue> dialogues, std::size_t batch_size = 32);

}  // namespace lpgnet
