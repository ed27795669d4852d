#include "lpgnet/harness.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <optional>
#include <sstream>

#include "lpgnet/errors.hpp"
#include "lpgnet/optim.hpp"

namespace lpgnet {

data::DialogueBatch random_batch(std::size_t f_t, std::size_t f_a, std::size_t classes,
                                 const std::vector<std::size_t>& lengths, std::uint64_t seed) {
  Rng rng(seed, "random_batch");
  std::vector<data::Dialogue> dialogues;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    data::Dialogue d;
    d.id = "d" + std::to_string(i);
    for (std::size_t k = 0; k < lengths[i]; ++k) {
      data::UtteranceRecord r;
      r.text.resize(f_t);
      r.audio.resize(f_a);
      for (double& x : r.text) x = rng.normal();
      for (double& x : r.audio) x = rng.normal();
      r.label = static_cast<int>(rng.below(classes));
      d.utterances.push_back(std::move(r));
    }
    dialogues.push_back(std::move(d));
  }
  return data::make_batch(dialogues);
}

namespace {

std::string group_of(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const auto second = name.find('.', first + 1);
  return name.substr(0, second);
}

}  // namespace

ModelGradCheckResult model_gradcheck(const ModelGradCheckOptions& o) {
  const auto t0 = std::chrono::steady_clock::now();
  if (o.u < 2 || o.b < 1) throw ContractError("gradcheck needs U >= 2 and B >= 1");
  ModelConfig cfg;
  cfg.f_t = o.f_t;
  cfg.f_a = o.f_a;
  cfg.classes = o.classes;
  cfg.d = o.d;
  cfg.d_ff = 2 * o.d;
  cfg.dropout = 0.0;
  cfg.tau = o.tau;
  cfg.ablation = o.ablation;
  LpgNet model(cfg, o.seed);

  Rng rng(o.seed, "gradcheck.bn");
  for (auto& s : model.bn_states()) {
    for (double& m : s.running_mean) m = rng.uniform(-0.5, 0.5);
    for (double& v : s.running_var) v = rng.uniform(0.5, 1.5);
  }
  std::vector<std::size_t> lengths(o.b, o.u);
  lengths.back() = o.u - 1;
  const data::DialogueBatch batch = random_batch(o.f_t, o.f_a, o.classes, lengths, o.seed);

  ForwardContext ctx;
  ctx.mode = Mode::eval;
  ctx.students = true;
  // The distillation target is a stop-gradient constant, so finite differences
  // must see it frozen at its unperturbed value too.
  const Tensor teacher_soft = model.forward(batch, ctx).teacher_soft;
  auto loss_fn = [&] {
    ModelOutput out = model.forward(batch, ctx);
    out.teacher_soft = teacher_soft;
    return model.loss(out, batch, o.lambdas).objective;
  };

  GradCheckOptions gc;
  gc.eps = o.eps;
  if (o.freeze_students) gc.include = [](const std::string& n) { return n.rfind("head.student_", 0) != 0; };

  ModelGradCheckResult result;
  {
    std::optional<fusion::ScopedGateGradientFault> fault;
    if (o.inject_gate_fault) fault.emplace();
    result.report = finite_difference_check(loss_fn, model.params(), gc);
  }
  std::map<std::string, double> worst;
  std::vector<std::string> order;
  for (const auto& p : result.report.per_param) {
    const std::string g = group_of(p.name);
    if (!worst.count(g)) order.push_back(g);
    worst[g] = std::max(worst[g], p.max_rel_error);
  }
  for (const auto& g : order) result.groups.emplace_back(g, worst[g]);
  result.passed = result.report.max_rel_error < o.threshold;
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty sample");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<BenchRow> run_bench(const BenchOptions& o) {
  if (o.repeats < 3) throw ContractError("bench needs at least 3 repeats");
  if (o.seq_lens.empty() || o.dims.empty()) throw ContractError("bench needs at least one sequence length and dim");
  if (o.batch < 2) throw ContractError("bench batch must be at least 2 (batch-norm training)");
  using clock = std::chrono::steady_clock;
  auto ms_since = [](clock::time_point t) { return std::chrono::duration<double, std::milli>(clock::now() - t).count(); };

  std::vector<BenchRow> rows;
  for (std::size_t u : o.seq_lens) {
    const data::DialogueBatch batch =
        random_batch(o.features, o.features, o.classes, std::vector<std::size_t>(o.batch, u), o.seed);
    for (std::size_t d : o.dims) {
      for (const char* arch : {"lpgnet", "stacked"}) {
        ModelConfig cfg;
        cfg.f_t = cfg.f_a = o.features;
        cfg.classes = o.classes;
        cfg.d = d;
        cfg.d_ff = 2 * d;
        auto model = make_model(arch, cfg, o.seed);
        BenchRow row;
        row.arch = arch;
        row.d = d;
        row.u = u;
        row.params = model->param_count().total;

        ForwardContext eval_ctx;
        model->forward(batch, eval_ctx);  // warm-up
        std::vector<double> fwd;
        for (std::size_t r = 0; r < o.repeats; ++r) {
          const auto t = clock::now();
          model->forward(batch, eval_ctx);
          fwd.push_back(ms_since(t));
        }
        Adam adam(model->params(), {});
        std::vector<double> step;
        for (std::size_t r = 0; r < o.repeats; ++r) {
          const auto t = clock::now();
          model->params().zero_grad();
          ForwardContext ctx;
          ctx.mode = Mode::train;
          ctx.students = true;
          ctx.dropout_seed = r;
          const auto out = model->forward(batch, ctx);
          backward(model->loss(out, batch, {}).objective);
          adam.step();
          step.push_back(ms_since(t));
        }
        row.forward_ms = median(fwd);
        row.train_step_ms = median(step);
        rows.push_back(row);
      }
    }
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "arch,d,U,params,forward_ms_median,train_step_ms_median\n";
  for (const auto& r : rows) {
    out << r.arch << ',' << r.d << ',' << r.u << ',' << r.params << ',' << r.forward_ms << ',' << r.train_step_ms
        << '\n';
  }
  return out.str();
}

}  // namespace lpgnet
