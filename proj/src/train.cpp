#include "lpgnet/train.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>

#include "lpgnet/errors.hpp"
#include "lpgnet/parallel.hpp"

namespace lpgnet {

using nlohmann::json;

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.hidden = 64;
  c.d_ff = 128;
  return c;
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ContractError("train config: " + what);
  };
  require(arch == "lpgnet" || arch == "stacked", "arch must be lpgnet or stacked");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be positive");
  require(batch_size >= 2, "batch_size must be at least 2 (batch-norm statistics)");
  require(hidden > 0, "hidden must be positive");
  require(epochs > 0, "epochs must be positive");
  require(weight_decay >= 0.0, "weight_decay must be non-negative");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
  require(tau > 0.0, "tau must be positive");
  require(lambdas.task >= 0.0 && lambdas.ce >= 0.0 && lambdas.kl >= 0.0, "loss weights must be non-negative");
  require(lambdas.task + lambdas.ce + lambdas.kl > 0.0, "at least one loss weight must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must lie in [0, 1)");
  require(adam_eps > 0.0, "adam_eps must be positive");
  require(clip_norm >= 0.0, "clip_norm must be non-negative");
  require(validation_fraction > 0.0 && validation_fraction < 1.0, "validation_fraction must lie in (0, 1)");
  ablation.validate();
  if (arch == "stacked") require(ablation == Ablation{}, "the stacked baseline has no ablations");
}

json TrainConfig::to_json() const {
  return {{"arch", arch},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"hidden", hidden},
          {"d_ff", resolved_d_ff()},
          {"epochs", epochs},
          {"weight_decay", weight_decay},
          {"dropout", dropout},
          {"tau", tau},
          {"lambda_task", lambdas.task},
          {"lambda_ce", lambdas.ce},
          {"lambda_kl", lambdas.kl},
          {"seed", seed},
          {"ablation", ablation.name()},
          {"with_students", with_students},
          {"kl_direction", heads::to_string(kl_direction)},
          {"beta1", beta1},
          {"beta2", beta2},
          {"adam_eps", adam_eps},
          {"clip_norm", clip_norm},
          {"validation_fraction", validation_fraction}};
}

TrainConfig TrainConfig::from_json(const json& j, const TrainConfig& base) {
  if (!j.is_object()) throw SchemaError("train config must be a JSON object");
  TrainConfig c = base;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "arch") c.arch = v.get<std::string>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "hidden") c.hidden = v.get<std::size_t>();
      else if (key == "d_ff") c.d_ff = v.get<std::size_t>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "weight_decay") c.weight_decay = v.get<double>();
      else if (key == "dropout") c.dropout = v.get<double>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "lambda_task") c.lambdas.task = v.get<double>();
      else if (key == "lambda_ce") c.lambdas.ce = v.get<double>();
      else if (key == "lambda_kl") c.lambdas.kl = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "ablation") c.ablation = Ablation::parse(v.get<std::string>());
      else if (key == "with_students") c.with_students = v.get<bool>();
      else if (key == "kl_direction") c.kl_direction = heads::parse_kl_direction(v.get<std::string>());
      else if (key == "beta1") c.beta1 = v.get<double>();
      else if (key == "beta2") c.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam_eps = v.get<double>();
      else if (key == "clip_norm") c.clip_norm = v.get<double>();
      else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
      else throw SchemaError("unknown train config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("train config: ") + e.what());
  }
  return c;
}

TrainConfig TrainConfig::from_json(const json& j) { return from_json(j, TrainConfig{}); }

ModelConfig model_config(const TrainConfig& config, const data::FeatureHeader& header) {
  ModelConfig m;
  m.f_t = header.f_t;
  m.f_a = header.f_a;
  m.classes = header.num_classes;
  m.d = config.hidden;
  m.d_ff = config.resolved_d_ff();
  m.dropout = config.dropout;
  m.tau = config.tau;
  m.ablation = config.ablation;
  m.with_students = config.with_students;
  m.kl_direction = config.kl_direction;
  return m;
}

json EpochRecord::to_json() const {
  return {{"epoch", epoch},
          {"train_loss", train_loss},
          {"train_task", train_task},
          {"validation_accuracy", validation_accuracy},
          {"validation_macro_f1", validation_macro_f1},
          {"validation_weighted_f1", validation_weighted_f1},
          {"seconds", seconds}};
}

EpochRecord EpochRecord::from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<std::size_t>();
  r.train_loss = j.at("train_loss").get<double>();
  r.train_task = j.at("train_task").get<double>();
  r.validation_accuracy = j.at("validation_accuracy").get<double>();
  r.validation_macro_f1 = j.at("validation_macro_f1").get<double>();
  r.validation_weighted_f1 = j.at("validation_weighted_f1").get<double>();
  r.seconds = j.value("seconds", 0.0);
  return r;
}

std::string history_csv(std::span<const EpochRecord> history, bool with_time) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,train_loss,train_task,validation_accuracy,validation_macro_f1,validation_weighted_f1";
  if (with_time) out << ",seconds";
  out << '\n';
  for (const auto& r : history) {
    out << r.epoch << ',' << r.train_loss << ',' << r.train_task << ',' << r.validation_accuracy << ','
        << r.validation_macro_f1 << ',' << r.validation_weighted_f1;
    if (with_time) out << ',' << r.seconds;
    out << '\n';
  }
  return out.str();
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch) {
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed, "train.shuffle", epoch);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() >= 2 && batches.back().size() == 1) {
    batches[batches.size() - 2].push_back(batches.back().front());
    batches.pop_back();
  }
  return batches;
}

heads::LossBundle train_step(Model& model, Adam& optimizer, const data::DialogueBatch& batch,
                             const TrainConfig& config, std::uint64_t dropout_seed) {
  model.params().zero_grad();
  ForwardContext ctx;
  ctx.mode = Mode::train;
  ctx.students = model.config().with_students;
  ctx.dropout_seed = dropout_seed;
  const ModelOutput out = model.forward(batch, ctx);
  heads::LossBundle bundle = model.loss(out, batch, config.lambdas);
  if (!std::isfinite(bundle.total)) return bundle;
  backward(bundle.objective);
  if (config.clip_norm > 0.0) clip_grad_norm(model.params(), config.clip_norm);
  optimizer.step();
  return bundle;
}

TrainResult train(const TrainConfig& config, const data::DatasetSplit& split, const EpochObserver& observer) {
  config.validate();
  if (split.train.empty()) throw ContractError("training split is empty");
  if (split.validation.empty()) throw ContractError("validation split is empty");
  const auto t0 = std::chrono::steady_clock::now();

  TrainResult result;
  result.config = config;
  result.model = make_model(config.arch, model_config(config, split.header), config.seed);
  Model& model = *result.model;
  Adam optimizer(model.params(), {config.learning_rate, config.beta1, config.beta2, config.adam_eps,
                                  config.weight_decay});

  std::vector<std::vector<double>> best_params;
  BufferStore best_buffers;
  double best_f1 = -1.0;
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto e0 = std::chrono::steady_clock::now();
    const auto batches = epoch_batches(split.train.size(), config.batch_size, config.seed, epoch);
    double loss_sum = 0.0, task_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<data::Dialogue> members;
      members.reserve(batches[b].size());
      for (std::size_t i : batches[b]) members.push_back(split.train[i]);
      const data::DialogueBatch batch = data::make_batch(members);
      const auto bundle = train_step(model, optimizer, batch, config, derive_key(config.seed, "train.dropout", step++));
      if (!std::isfinite(bundle.total)) throw DivergenceError(epoch, b + 1, bundle.total);
      loss_sum += bundle.total;
      task_sum += bundle.task;
    }

    const MetricsReport val = evaluate(model, split.validation, config.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(batches.size());
    rec.train_task = task_sum / static_cast<double>(batches.size());
    rec.validation_accuracy = val.accuracy;
    rec.validation_macro_f1 = val.macro_f1;
    rec.validation_weighted_f1 = val.weighted_f1;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - e0).count();
    result.history.push_back(rec);
    if (observer) observer(rec);

    if (val.macro_f1 > best_f1) {
      best_f1 = val.macro_f1;
      result.best_epoch = epoch;
      result.best_validation = val;
      best_params = model.params().snapshot();
      best_buffers = model.buffers();
    }
  }

  model.params().restore(best_params);
  model.load_buffers(best_buffers);
  if (!split.test.empty()) result.test = evaluate(model, split.test, config.batch_size);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

namespace {

Predictions predict_batches(Model& model, std::span<const data::DialogueBatch> batches) {
  Predictions p;
  ForwardContext ctx;  // eval mode, no students
  for (const auto& batch : batches) {
    const ModelOutput out = model.forward(batch, ctx);
    const std::vector<int> arg = heads::argmax_lastdim(out.probs);
    for (std::size_t i = 0; i < batch.labels.size(); ++i) {
      if (batch.labels[i] == data::kPadLabel) continue;
      p.predicted.push_back(arg[i]);
      p.labels.push_back(batch.labels[i]);
    }
  }
  return p;
}

}  // namespace

Predictions predict(Model& model, std::span<const data::Dialogue> dialogues, std::size_t batch_size) {
  if (dialogues.empty()) return {};
  const auto batches = data::pad_batch(dialogues, batch_size);
  return predict_batches(model, batches);
}

MetricsReport evaluate(Model& model, std::span<const data::Dialogue> dialogues, std::size_t batch_size) {
  if (dialogues.empty()) throw ContractError("evaluation set is empty");
  const std::size_t classes = model.config().classes;
  const auto batches = data::pad_batch(dialogues, batch_size);
  for (const auto& b : batches) check_batch(model.config(), b);

  const std::size_t workers = std::min<std::size_t>(max_threads(), batches.size());
  ConfusionMatrix total(classes, std::vector<std::size_t>(classes, 0));
  auto shard = [&](std::size_t w) {
    std::vector<data::DialogueBatch> mine;
    for (std::size_t i = w; i < batches.size(); i += workers) mine.push_back(batches[i]);
    const Predictions p = predict_batches(model, mine);
    return confusion_matrix(p.predicted, p.labels, classes);
  };
  if (workers <= 1) {
    merge_into(total, shard(0));
  } else {
    std::vector<std::future<ConfusionMatrix>> jobs;
    for (std::size_t w = 0; w < workers; ++w) jobs.push_back(std::async(std::launch::async, shard, w));
    for (auto& j : jobs) merge_into(total, j.get());
  }
  return metrics_from_confusion(total);
}

}  // namespace lpgnet
