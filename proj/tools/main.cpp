// lpgnet command-line entry point: synth, train, eval, gradcheck, bench.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "digest.hpp"
#include "lpgnet/checkpoint.hpp"
#include "lpgnet/data.hpp"
#include "lpgnet/errors.hpp"
#include "lpgnet/harness.hpp"
#include "lpgnet/parallel.hpp"
#include "lpgnet/train.hpp"

#ifndef LPGNET_BUILD_ID
#define LPGNET_BUILD_ID "lpgnet-dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace lpgnet;

namespace {

enum ExitCode : int {
  kOk = 0,
  kCheckFailed = 1,
  kUsage = 2,
  kInputError = 3,
  kDiverged = 4,
};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json file_entry(const fs::path& path) { return {{"path", path.string()}, {"sha256", cli::sha256_file(path)}}; }

/// One manifest per run. Everything except "timings" is a pure function of
/// the inputs, so two identical runs agree on it.
struct RunManifest {
  std::string command;
  json config = json::object();
  std::vector<std::uint64_t> seeds;
  json inputs = json::array();
  json outputs = json::array();
  json timings = json::object();

  void add_input(const fs::path& p) { inputs.push_back(file_entry(p)); }
  void add_output(const fs::path& p) { outputs.push_back(file_entry(p)); }

  void write(const fs::path& path) const {
    const json j = {{"command", command},
                    {"build", LPGNET_BUILD_ID},
                    {"threads", max_threads()},
                    {"config", config},
                    {"seeds", seeds},
                    {"inputs", inputs},
                    {"outputs", outputs},
                    {"timings", timings}};
    write_text(path, dump(j));
  }
};

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error("data file '" + p.string() + "' does not exist");
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << v;
  return s.str();
}

void print_report(std::ostream& out, const MetricsReport& r, const std::vector<std::string>& labels) {
  out << "utterances          " << r.total << '\n'
      << "accuracy            " << fmt(r.accuracy) << '\n'
      << "macro_f1            " << fmt(r.macro_f1) << '\n'
      << "weighted_f1         " << fmt(r.weighted_f1) << '\n'
      << "ova_binary_accuracy " << fmt(r.ova_binary_accuracy) << "\n\n";
  out << std::left << std::setw(12) << "class" << std::right << std::setw(10) << "precision" << std::setw(10)
      << "recall" << std::setw(10) << "f1" << std::setw(10) << "ova_acc" << std::setw(9) << "support" << '\n';
  for (std::size_t k = 0; k < r.per_class.size(); ++k) {
    const auto& m = r.per_class[k];
    const std::string name = k < labels.size() ? labels[k] : std::to_string(k);
    out << std::left << std::setw(12) << name << std::right << std::setw(10) << fmt(m.precision) << std::setw(10)
        << fmt(m.recall) << std::setw(10) << fmt(m.f1) << std::setw(10) << fmt(m.binary_accuracy) << std::setw(9)
        << m.support << '\n';
  }
  out << "\nconfusion (rows = true, cols = predicted)\n";
  for (const auto& row : r.confusion) {
    for (std::size_t v : row) out << std::setw(7) << v;
    out << '\n';
  }
}

// ---- synth ------------------------------------------------------------------------

struct SynthArgs {
  data::SynthSpec spec;
  std::string mode = "both";
  std::uint64_t seed = 0;
  fs::path out;
};

json split_stats(std::span<const data::Dialogue> part, std::size_t classes) {
  return {{"dialogues", part.size()},
          {"utterances", data::utterance_count(part)},
          {"class_counts", data::class_counts(part, classes)}};
}

int cmd_synth(const SynthArgs& a) {
  const auto t0 = Clock::now();
  data::SynthSpec spec = a.spec;
  data::DatasetSplit split;
  try {
    spec.mode = data::parse_modality_mode(a.mode);
    split = data::synth_generate(spec, a.seed);
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  fs::create_directories(a.out);
  RunManifest m;
  m.command = "synth";
  m.seeds = {a.seed};
  m.config = {{"classes", spec.classes},
              {"mode", data::to_string(spec.mode)},
              {"f_t", spec.f_t},
              {"f_a", spec.f_a},
              {"train_dialogues", spec.train_dialogues},
              {"validation_dialogues", spec.validation_dialogues},
              {"test_dialogues", spec.test_dialogues},
              {"min_len", spec.min_len},
              {"max_len", spec.max_len},
              {"separation", spec.separation},
              {"noise", spec.noise}};

  const std::pair<const char*, const std::vector<data::Dialogue>*> parts[] = {
      {"train", &split.train}, {"validation", &split.validation}, {"test", &split.test}};
  const char* files[] = {"train.jsonl", "val.jsonl", "test.jsonl"};
  json stats = {{"classes", spec.classes}, {"labels", split.header.labels}, {"mode", data::to_string(spec.mode)}};
  std::vector<std::size_t> totals(spec.classes, 0);
  for (std::size_t i = 0; i < 3; ++i) {
    const fs::path p = a.out / files[i];
    data::write_feature_file(p, data::Dataset{split.header, *parts[i].second});
    m.add_output(p);
    stats["splits"][parts[i].first] = split_stats(*parts[i].second, spec.classes);
    const auto counts = data::class_counts(*parts[i].second, spec.classes);
    for (std::size_t k = 0; k < totals.size(); ++k) totals[k] += counts[k];
  }
  stats["total_class_counts"] = totals;
  const fs::path stats_path = a.out / "stats.json";
  write_text(stats_path, dump(stats));
  m.add_output(stats_path);
  m.timings = {{"total_seconds", seconds_since(t0)}};
  m.write(a.out / "manifest.json");
  std::cout << "wrote " << split.train.size() << '/' << split.validation.size() << '/' << split.test.size()
            << " dialogues to " << a.out.string() << '\n';
  return kOk;
}

// ---- train ------------------------------------------------------------------------

struct TrainArgs {
  fs::path config_file;
  fs::path data_dir;
  fs::path train_file, val_file, test_file;
  std::vector<std::uint64_t> seeds;
  fs::path out;
  std::string preset = "reference";
  std::optional<std::string> arch, ablation, kl_direction;
  std::optional<double> lr, weight_decay, dropout, tau, lambda_task, lambda_ce, lambda_kl, clip_norm, val_fraction;
  std::optional<std::size_t> epochs, batch_size, hidden, d_ff;
  bool no_students = false;
  bool quiet = false;
};

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig c;
  if (a.preset == "desk") c = TrainConfig::desk();
  else if (a.preset != "reference") throw UsageError("unknown preset '" + a.preset + "'");
  if (!a.config_file.empty()) {
    std::ifstream in(a.config_file);
    if (!in) throw Error("cannot read config '" + a.config_file.string() + "'");
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ParseError(0, std::string("config: ") + e.what());
    }
    c = TrainConfig::from_json(j, c);
  }
  try {
    if (a.arch) c.arch = *a.arch;
    if (a.ablation) c.ablation = Ablation::parse(*a.ablation);
    if (a.kl_direction) c.kl_direction = heads::parse_kl_direction(*a.kl_direction);
    if (a.lr) c.learning_rate = *a.lr;
    if (a.weight_decay) c.weight_decay = *a.weight_decay;
    if (a.dropout) c.dropout = *a.dropout;
    if (a.tau) c.tau = *a.tau;
    if (a.lambda_task) c.lambdas.task = *a.lambda_task;
    if (a.lambda_ce) c.lambdas.ce = *a.lambda_ce;
    if (a.lambda_kl) c.lambdas.kl = *a.lambda_kl;
    if (a.clip_norm) c.clip_norm = *a.clip_norm;
    if (a.val_fraction) c.validation_fraction = *a.val_fraction;
    if (a.epochs) c.epochs = *a.epochs;
    if (a.batch_size) c.batch_size = *a.batch_size;
    if (a.hidden) c.hidden = *a.hidden;
    if (a.d_ff) c.d_ff = *a.d_ff;
    if (a.no_students) c.with_students = false;
    c.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  return c;
}

json mean_std(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  const double sd = v.size() > 1 ? std::sqrt(var / static_cast<double>(v.size() - 1)) : 0.0;
  return {{"mean", mean}, {"std", sd}, {"values", v}};
}

int cmd_train(TrainArgs a) {
  const auto t0 = Clock::now();
  TrainConfig base = resolve_config(a);
  if (a.seeds.empty()) a.seeds.push_back(base.seed);

  fs::path train_path = a.train_file, val_path = a.val_file, test_path = a.test_file;
  if (!a.data_dir.empty()) {
    if (train_path.empty()) train_path = a.data_dir / "train.jsonl";
    if (val_path.empty() && fs::exists(a.data_dir / "val.jsonl")) val_path = a.data_dir / "val.jsonl";
    if (test_path.empty() && fs::exists(a.data_dir / "test.jsonl")) test_path = a.data_dir / "test.jsonl";
  }
  if (train_path.empty()) throw UsageError("train needs --data or --train");
  for (const auto& p : {train_path, val_path, test_path})
    if (!p.empty()) require_file(p);

  // Everything is loaded and checked before the output directory is touched.
  const data::Dataset train_set = data::load_feature_file(train_path);
  std::optional<data::Dataset> val_set, test_set;
  if (!val_path.empty()) val_set = data::load_feature_file(val_path);
  if (!test_path.empty()) test_set = data::load_feature_file(test_path);
  for (const auto* other : {val_set ? &*val_set : nullptr, test_set ? &*test_set : nullptr}) {
    if (other && !(other->header == train_set.header)) throw SchemaError("split headers disagree");
  }
  if (train_set.dialogues.empty()) throw ContractError("training file has no dialogues");

  fs::create_directories(a.out);
  RunManifest m;
  m.command = "train";
  m.config = base.to_json();
  m.config.erase("seed");
  m.seeds = a.seeds;
  m.add_input(train_path);
  if (!val_path.empty()) m.add_input(val_path);
  if (!test_path.empty()) m.add_input(test_path);

  std::vector<double> test_acc, test_f1, test_wf1, test_ova;
  int status = kOk;
  for (std::uint64_t seed : a.seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    const fs::path dir = a.seeds.size() == 1 ? a.out : a.out / ("seed_" + std::to_string(seed));
    fs::create_directories(dir);

    data::DatasetSplit split;
    split.header = train_set.header;
    if (val_set) {
      split.train = train_set.dialogues;
      split.validation = val_set->dialogues;
    } else {
      std::tie(split.train, split.validation) =
          data::split_train_validation(train_set.dialogues, cfg.validation_fraction, seed);
    }
    if (test_set) split.test = test_set->dialogues;

    const fs::path history_path = dir / "history.csv";
    std::vector<EpochRecord> seen;
    json epoch_seconds = json::array();
    auto observer = [&](const EpochRecord& r) {
      seen.push_back(r);
      epoch_seconds.push_back(r.seconds);
      write_text(history_path, history_csv(seen, /*with_time=*/false));
      if (!a.quiet) {
        std::cout << "seed " << seed << " epoch " << r.epoch << '/' << cfg.epochs << " loss " << fmt(r.train_loss)
                  << " val_acc " << fmt(r.validation_accuracy) << " val_macro_f1 " << fmt(r.validation_macro_f1)
                  << '\n';
      }
    };

    const auto s0 = Clock::now();
    TrainResult result;
    try {
      result = train(cfg, split, observer);
    } catch (const DivergenceError& e) {
      const fs::path report_path = dir / "report.json";
      write_text(report_path, dump({{"status", "diverged"},
                                    {"arch", cfg.arch},
                                    {"ablation", cfg.ablation.name()},
                                    {"seed", seed},
                                    {"epoch", e.epoch()},
                                    {"batch", e.batch()},
                                    {"message", e.what()}}));
      m.add_output(history_path);
      m.add_output(report_path);
      std::cerr << "error: " << e.what() << '\n';
      status = kDiverged;
      break;
    }

    std::vector<EpochRecord> stored = result.history;
    for (auto& r : stored) r.seconds = 0.0;
    const fs::path ckpt_path = dir / "checkpoint.lpg";
    save_checkpoint(ckpt_path, Checkpoint::capture(*result.model, cfg.to_json(), result.best_epoch, stored));

    json history = json::array();
    for (const auto& r : stored) {
      json row = r.to_json();
      row.erase("seconds");
      history.push_back(row);
    }
    json report = {{"status", "ok"},
                   {"arch", cfg.arch},
                   {"ablation", cfg.ablation.name()},
                   {"seed", seed},
                   {"config", cfg.to_json()},
                   {"param_count", result.model->param_count().total},
                   {"best_epoch", result.best_epoch},
                   {"best_validation", result.best_validation.to_json()},
                   {"history", history}};
    if (result.test) {
      report["test"] = result.test->to_json();
      test_acc.push_back(result.test->accuracy);
      test_f1.push_back(result.test->macro_f1);
      test_wf1.push_back(result.test->weighted_f1);
      test_ova.push_back(result.test->ova_binary_accuracy);
    }
    const fs::path report_path = dir / "report.json";
    write_text(report_path, dump(report));
    for (const auto& p : {ckpt_path, history_path, report_path}) m.add_output(p);
    m.timings["seed_" + std::to_string(seed)] = {{"train_seconds", seconds_since(s0)}, {"epoch_seconds", epoch_seconds}};

    std::cout << "seed " << seed << " [" << cfg.arch << ", " << cfg.ablation.name() << "] best epoch "
              << result.best_epoch << " val_macro_f1 " << fmt(result.best_validation.macro_f1);
    if (result.test) std::cout << " test_acc " << fmt(result.test->accuracy) << " test_macro_f1 " << fmt(result.test->macro_f1);
    std::cout << '\n';
  }

  if (status == kOk && a.seeds.size() > 1 && !test_acc.empty()) {
    const fs::path summary_path = a.out / "summary.json";
    write_text(summary_path, dump({{"arch", base.arch},
                                   {"ablation", base.ablation.name()},
                                   {"seeds", a.seeds},
                                   {"test_accuracy", mean_std(test_acc)},
                                   {"test_macro_f1", mean_std(test_f1)},
                                   {"test_weighted_f1", mean_std(test_wf1)},
                                   {"test_ova_binary_accuracy", mean_std(test_ova)}}));
    m.add_output(summary_path);
  }
  m.timings["total_seconds"] = seconds_since(t0);
  m.write(a.out / "manifest.json");
  return status;
}

// ---- eval -------------------------------------------------------------------------

struct EvalArgs {
  fs::path checkpoint;
  fs::path data;
  fs::path out;
  std::size_t batch_size = 32;
};

int cmd_eval(const EvalArgs& a) {
  const auto t0 = Clock::now();
  require_file(a.checkpoint);
  require_file(a.data);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  const data::Dataset ds = data::load_feature_file(a.data);
  if (ds.header.num_classes != ckpt.model_config.classes) {
    throw SchemaError("data has " + std::to_string(ds.header.num_classes) + " classes, checkpoint expects " +
                      std::to_string(ckpt.model_config.classes));
  }
  if (ds.header.f_t != ckpt.model_config.f_t || ds.header.f_a != ckpt.model_config.f_a) {
    throw SchemaError("data feature dimensions do not match the checkpoint");
  }
  auto model = ckpt.instantiate();
  const MetricsReport report = evaluate(*model, ds.dialogues, a.batch_size);

  std::cout << "checkpoint " << a.checkpoint.string() << " (" << ckpt.arch << ", "
            << ckpt.model_config.ablation.name() << ", epoch " << ckpt.epoch << ")\n";
  print_report(std::cout, report, ds.header.labels);
  std::cout << "macro_f1_exact " << std::setprecision(17) << report.macro_f1 << '\n';

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    const fs::path report_path = a.out / "report.json";
    write_text(report_path, dump(report.to_json()));
    RunManifest m;
    m.command = "eval";
    m.config = {{"batch_size", a.batch_size}, {"arch", ckpt.arch}, {"model_config", ckpt.model_config.to_json()}};
    m.add_input(a.checkpoint);
    m.add_input(a.data);
    m.add_output(report_path);
    m.timings = {{"total_seconds", seconds_since(t0)}};
    m.write(a.out / "manifest.json");
  }
  return kOk;
}

// ---- gradcheck --------------------------------------------------------------------

struct GradcheckArgs {
  std::string scale = "tiny";
  std::string freeze = "none";
  std::uint64_t seed = 0;
  double tau = 1.0;
  bool inject_gate_fault = false;
  fs::path out;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  if (a.scale != "tiny") throw UsageError("only --scale tiny is supported");
  if (a.freeze != "none" && a.freeze != "students") throw UsageError("--freeze takes 'none' or 'students'");
  ModelGradCheckOptions o;
  o.seed = a.seed;
  o.tau = a.tau;
  o.freeze_students = a.freeze == "students";
  o.inject_gate_fault = a.inject_gate_fault;
  const ModelGradCheckResult r = model_gradcheck(o);

  std::cout << "gradcheck d=" << o.d << " U=" << o.u << " B=" << o.b << " eps=" << o.eps
            << " lambdas=(" << o.lambdas.task << ", " << o.lambdas.ce << ", " << o.lambdas.kl << ")"
            << (o.freeze_students ? " students frozen" : "") << '\n';
  for (const auto& [group, err] : r.groups) {
    std::cout << "  " << std::left << std::setw(18) << group << " max_rel_err=" << std::scientific
              << std::setprecision(3) << err << std::defaultfloat << '\n';
  }
  std::cout << (r.passed ? "PASS" : "FAIL") << " max_rel_err=" << std::scientific << std::setprecision(3)
            << r.report.max_rel_error << std::defaultfloat << " worst=" << r.report.worst_param
            << " coords=" << r.report.coords_checked << " seconds=" << fmt(r.seconds, 2) << '\n';

  if (!a.out.empty()) {
    fs::create_directories(a.out);
    json groups = json::object();
    for (const auto& [g, e] : r.groups) groups[g] = e;
    const fs::path report_path = a.out / "gradcheck.json";
    write_text(report_path, dump({{"passed", r.passed},
                                  {"max_rel_error", r.report.max_rel_error},
                                  {"worst_param", r.report.worst_param},
                                  {"coords_checked", r.report.coords_checked},
                                  {"groups", groups}}));
    RunManifest m;
    m.command = "gradcheck";
    m.config = {{"scale", a.scale}, {"freeze", a.freeze}, {"tau", a.tau}, {"fault", a.inject_gate_fault}};
    m.seeds = {a.seed};
    m.add_output(report_path);
    m.timings = {{"total_seconds", r.seconds}};
    m.write(a.out / "manifest.json");
  }
  return r.passed ? kOk : kCheckFailed;
}

// ---- bench ------------------------------------------------------------------------

struct BenchArgs {
  BenchOptions options;
  fs::path out;
};

int cmd_bench(const BenchArgs& a) {
  const auto t0 = Clock::now();
  if (a.options.repeats < 3) throw UsageError("--repeats must be at least 3");
  const auto rows = run_bench(a.options);
  const std::string csv = bench_csv(rows);
  std::cout << csv;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    const fs::path csv_path = a.out / "bench.csv";
    write_text(csv_path, csv);
    RunManifest m;
    m.command = "bench";
    m.config = {{"seq_lens", a.options.seq_lens},
                {"dims", a.options.dims},
                {"repeats", a.options.repeats},
                {"batch", a.options.batch},
                {"features", a.options.features}};
    m.seeds = {a.options.seed};
    m.outputs.push_back({{"path", csv_path.string()}});  // timings make the digest run-dependent
    m.timings = {{"total_seconds", seconds_since(t0)}};
    m.write(a.out / "manifest.json");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LPGNet multimodal emotion recognition in conversations"};
  app.footer(
      "Exit codes: 0 ok, 1 gradcheck failed, 2 usage error, 3 input/contract/schema error, 4 training diverged.\n"
      "LPGNET_THREADS caps internal parallelism (default 1).");
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate synthetic LPG-JSONL train/val/test splits");
  s->add_option("--classes", synth.spec.classes, "Number of emotion classes (>= 2)")->capture_default_str();
  s->add_option("--mode", synth.mode, "both | text-only-informative | audio-only-informative | complementary")
      ->capture_default_str();
  s->add_option("--seed", synth.seed)->capture_default_str();
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--f-t", synth.spec.f_t, "Text feature dimension")->capture_default_str();
  s->add_option("--f-a", synth.spec.f_a, "Audio feature dimension")->capture_default_str();
  s->add_option("--train-dialogues", synth.spec.train_dialogues)->capture_default_str();
  s->add_option("--val-dialogues", synth.spec.validation_dialogues)->capture_default_str();
  s->add_option("--test-dialogues", synth.spec.test_dialogues)->capture_default_str();
  s->add_option("--min-len", synth.spec.min_len)->capture_default_str();
  s->add_option("--max-len", synth.spec.max_len)->capture_default_str();
  s->add_option("--separation", synth.spec.separation, "Norm of the class centres")->capture_default_str();
  s->add_option("--noise", synth.spec.noise, "Per-coordinate noise standard deviation")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model; writes checkpoint, history.csv, report.json, manifest.json");
  t->footer("Precedence: preset defaults < --config file < command-line flags.");
  t->add_option("--config", tr.config_file, "Flat JSON config (keys as in report.json 'config')");
  t->add_option("--data", tr.data_dir, "Directory with train.jsonl and optional val.jsonl, test.jsonl");
  t->add_option("--train", tr.train_file, "Training file (overrides --data)");
  t->add_option("--val", tr.val_file, "Validation file; without one a seeded share of train is held out");
  t->add_option("--test", tr.test_file, "Test file");
  t->add_option("--seed", tr.seeds, "Seed; repeat or comma-separate for a seed list")->delimiter(',');
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--preset", tr.preset, "reference (hidden 768) or desk (hidden 64)")->capture_default_str();
  t->add_option("--arch", tr.arch, "lpgnet or stacked");
  t->add_option("--ablation", tr.ablation,
                "full, or '+'-joined: no_inter_attention, no_intra_attention, no_ffn, no_dual_gate, text_only, "
                "audio_only");
  t->add_option("--kl-direction", tr.kl_direction, "student_teacher or teacher_student");
  t->add_option("--lr", tr.lr);
  t->add_option("--weight-decay", tr.weight_decay);
  t->add_option("--dropout", tr.dropout);
  t->add_option("--tau", tr.tau);
  t->add_option("--lambda-task", tr.lambda_task);
  t->add_option("--lambda-ce", tr.lambda_ce);
  t->add_option("--lambda-kl", tr.lambda_kl);
  t->add_option("--clip-norm", tr.clip_norm, "Global gradient-norm cap (0 = off)");
  t->add_option("--val-fraction", tr.val_fraction);
  t->add_option("--epochs", tr.epochs);
  t->add_option("--batch-size", tr.batch_size);
  t->add_option("--hidden", tr.hidden);
  t->add_option("--d-ff", tr.d_ff);
  t->add_flag("--no-students", tr.no_students, "Build without the self-distillation heads");
  t->add_flag("--quiet", tr.quiet, "No per-epoch lines");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on an LPG-JSONL file");
  e->add_option("--checkpoint", ev.checkpoint)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--out", ev.out, "Directory for report.json and manifest.json");
  e->add_option("--batch-size", ev.batch_size)->capture_default_str();

  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Central-difference check of the full training objective");
  g->add_option("--scale", gc.scale, "tiny: d=8, U=3, B=2")->capture_default_str();
  g->add_option("--freeze", gc.freeze, "none or students")->capture_default_str();
  g->add_option("--seed", gc.seed)->capture_default_str();
  g->add_option("--tau", gc.tau)->capture_default_str();
  g->add_option("--out", gc.out, "Directory for gradcheck.json and manifest.json");
  g->add_flag("--inject-gate-fault", gc.inject_gate_fault)->group("");

  BenchArgs bn;
  auto* b = app.add_subcommand("bench", "Parameter count and latency: LPGNet vs stacked encoder baseline");
  b->add_option("--seq-lens", bn.options.seq_lens)->delimiter(',')->capture_default_str();
  b->add_option("--dims", bn.options.dims)->delimiter(',')->capture_default_str();
  b->add_option("--repeats", bn.options.repeats)->capture_default_str();
  b->add_option("--batch", bn.options.batch)->capture_default_str();
  b->add_option("--features", bn.options.features)->capture_default_str();
  b->add_option("--seed", bn.options.seed)->capture_default_str();
  b->add_option("--out", bn.out, "Directory for bench.csv and manifest.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*g) return cmd_gradcheck(gc);
    if (*b) return cmd_bench(bn);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsage;
  } catch (const DivergenceError& err) {
    std::cerr << "diverged: " << err.what() << '\n';
    return kDiverged;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kInputError;
  }
  return kUsage;
}
