#include "lpgnet/model.hpp"

#include <sstream>

#include "lpgnet/baseline.hpp"
#include "lpgnet/errors.hpp"

namespace lpgnet {

using nlohmann::json;

// ---- Ablation -------------------------------------------------------------------

namespace {

struct FlagName {
  bool Ablation::*flag;
  const char* name;
};

constexpr FlagName kFlags[] = {
    {&Ablation::no_inter_attention, "no_inter_attention"},
    {&Ablation::no_intra_attention, "no_intra_attention"},
    {&Ablation::no_ffn, "no_ffn"},
    {&Ablation::no_dual_gate, "no_dual_gate"},
    {&Ablation::text_only, "text_only"},
    {&Ablation::audio_only, "audio_only"},
};

}  // namespace

std::string Ablation::name() const {
  std::string out;
  for (const auto& f : kFlags) {
    if (!(this->*f.flag)) continue;
    if (!out.empty()) out += '+';
    out += f.name;
  }
  return out.empty() ? "full" : out;
}

Ablation Ablation::parse(const std::string& spec) {
  Ablation a;
  if (spec.empty() || spec == "full" || spec == "none") return a;
  std::stringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, '+')) {
    bool found = false;
    for (const auto& f : kFlags) {
      if (token == f.name) {
        a.*f.flag = true;
        found = true;
      }
    }
    if (!found) throw ContractError("unknown ablation '" + token + "'");
  }
  a.validate();
  return a;
}

void Ablation::validate() const {
  if (text_only && audio_only) throw ContractError("text_only and audio_only are mutually exclusive");
  if (no_inter_attention && no_intra_attention) throw ContractError("removing both attention types leaves no path");
  if ((text_only || audio_only) && no_intra_attention) {
    throw ContractError("a unimodal model has only its intra-modal path; it cannot also drop it");
  }
}

// ---- ModelConfig ----------------------------------------------------------------

json ModelConfig::to_json() const {
  return {{"f_t", f_t},
          {"f_a", f_a},
          {"classes", classes},
          {"d", d},
          {"d_ff", d_ff},
          {"dropout", dropout},
          {"tau", tau},
          {"leaky_slope", leaky_slope},
          {"ablation", ablation.name()},
          {"with_students", with_students},
          {"kl_direction", heads::to_string(kl_direction)}};
}

ModelConfig ModelConfig::from_json(const json& j) {
  ModelConfig c;
  c.f_t = j.at("f_t").get<std::size_t>();
  c.f_a = j.at("f_a").get<std::size_t>();
  c.classes = j.at("classes").get<std::size_t>();
  c.d = j.at("d").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.tau = j.at("tau").get<double>();
  c.leaky_slope = j.value("leaky_slope", 0.01);
  c.ablation = Ablation::parse(j.value("ablation", std::string("full")));
  c.with_students = j.value("with_students", true);
  c.kl_direction = heads::parse_kl_direction(j.value("kl_direction", std::string("student_teacher")));
  return c;
}

std::size_t ParamCount::group(const std::string& name) const {
  for (const auto& [n, v] : groups)
    if (n == name) return v;
  throw ContractError("no parameter group '" + name + "'");
}

void check_batch(const ModelConfig& config, const data::DialogueBatch& batch) {
  if (batch.text.dim(2) != config.f_t || batch.audio.dim(2) != config.f_a) {
    throw DimensionError("batch features [" + std::to_string(batch.text.dim(2)) + ", " +
                         std::to_string(batch.audio.dim(2)) + "] do not match model [" + std::to_string(config.f_t) +
                         ", " + std::to_string(config.f_a) + "]");
  }
  for (int y : batch.labels) {
    if (y >= static_cast<int>(config.classes)) {
      throw SchemaError("label " + std::to_string(y) + " outside model's " + std::to_string(config.classes) +
                        " classes");
    }
  }
}

// ---- LpgNet ---------------------------------------------------------------------

LpgNet::LpgNet(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  config_.ablation.validate();
  if (config_.f_t == 0 || config_.f_a == 0 || config_.d == 0) throw ContractError("model dimensions must be positive");
  lpia_config_.f_t = config_.f_t;
  lpia_config_.f_a = config_.f_a;
  lpia_config_.d = config_.d;
  lpia_config_.d_ff = config_.d_ff;
  lpia_config_.dropout = config_.dropout;
  lpia_config_.leaky_slope = config_.leaky_slope;
  lpia_config_.use_ffn = !config_.ablation.no_ffn;

  Rng rng(init_seed, "init");
  lpia_ = lpia::register_params(params_, lpia_config_, rng);
  fusion_ = fusion::register_params(params_, config_.d, rng);
  heads_ = heads::register_params(params_, config_.d, config_.classes, config_.with_students, rng);
  for (auto& s : bn_states_) s = lpia::BatchNormState::fresh(config_.d);
}

ModelOutput LpgNet::forward(const data::DialogueBatch& batch, const ForwardContext& ctx) {
  check_batch(config_, batch);
  const Ablation& ab = config_.ablation;
  using lpia::Path;

  lpia::PathSet enabled = lpia::kAllPathsEnabled;
  auto disable = [&](Path p) { enabled[static_cast<std::size_t>(p)] = false; };
  if (ab.no_inter_attention) {
    disable(Path::at);
    disable(Path::ta);
  }
  if (ab.no_intra_attention) {
    disable(Path::tt);
    disable(Path::aa);
  }
  if (ab.text_only) {
    disable(Path::aa);
    disable(Path::at);
    disable(Path::ta);
  }
  if (ab.audio_only) {
    disable(Path::tt);
    disable(Path::at);
    disable(Path::ta);
  }

  const Tensor x_t = ab.audio_only ? Tensor{} : lpia::project_conv1d(batch.text, lpia_.proj_t);
  const Tensor x_a = ab.text_only ? Tensor{} : lpia::project_conv1d(batch.audio, lpia_.proj_a);

  ModelOutput out;
  out.lpia = lpia::lpia_forward(x_t, x_a, batch.mask, lpia_, bn_states_, lpia_config_, ctx, enabled);
  const auto uni = fusion::unimodal_fuse(*out.lpia, fusion_, ab.no_dual_gate);

  Tensor features;
  if (ab.text_only) {
    features = uni.t_fused;
  } else if (ab.audio_only) {
    features = uni.a_fused;
  } else {
    out.fused = fusion::multimodal_fuse(uni.t_fused, uni.a_fused, fusion_.score_weight, ab.no_dual_gate);
    features = out.fused->f_final;
  }

  auto cls = heads::classify(features, heads_.teacher);
  out.logits = cls.logits;
  out.probs = cls.probs;

  if (ctx.students && config_.with_students) {
    out.teacher_soft = heads::soften(out.logits.detach(), config_.tau);
    if (uni.t_fused.defined()) out.student_t = heads::student_forward(uni.t_fused, heads_.student_t, config_.tau);
    if (uni.a_fused.defined()) out.student_a = heads::student_forward(uni.a_fused, heads_.student_a, config_.tau);
  }
  return out;
}

heads::LossBundle LpgNet::loss(const ModelOutput& out, const data::DialogueBatch& batch,
                               const heads::LossWeights& lambdas) const {
  heads::LossTerms terms;
  terms.task = heads::task_loss(out.probs, batch.labels);
  auto student = [&](const std::optional<heads::StudentOutput>& s, Tensor& ce, Tensor& kl) {
    if (!s) return;
    auto d = heads::distill_losses(s->soft_probs, out.teacher_soft, s->probs, batch.labels, config_.kl_direction);
    ce = d.ce;
    kl = d.kl;
  };
  student(out.student_t, terms.ce_t, terms.kl_t);
  student(out.student_a, terms.ce_a, terms.kl_a);
  return heads::total_loss(terms, lambdas);
}

BufferStore LpgNet::buffers() const {
  BufferStore b;
  for (lpia::Path p : lpia::kPaths) {
    const std::string pre = "lpia." + std::string(lpia::path_name(p)) + ".bn.";
    const auto& s = bn_states_[static_cast<std::size_t>(p)];
    b[pre + "running_mean"] = s.running_mean;
    b[pre + "running_var"] = s.running_var;
  }
  return b;
}

void LpgNet::load_buffers(const BufferStore& buffers) {
  for (lpia::Path p : lpia::kPaths) {
    const std::string pre = "lpia." + std::string(lpia::path_name(p)) + ".bn.";
    auto& s = bn_states_[static_cast<std::size_t>(p)];
    for (auto [name, dst] : {std::pair{"running_mean", &s.running_mean}, std::pair{"running_var", &s.running_var}}) {
      auto it = buffers.find(pre + name);
      if (it == buffers.end()) throw SchemaError("missing buffer '" + pre + name + "'");
      if (it->second.size() != config_.d) throw SchemaError("buffer '" + pre + name + "' has wrong size");
      *dst = it->second;
    }
  }
}

ParamCount LpgNet::param_count() const {
  ParamCount c;
  auto add = [&](const std::string& name, std::size_t n) { c.groups.emplace_back(name, n); };
  add("lpia.proj", params_.scalar_count("lpia.proj_"));
  std::size_t block = 0;
  for (lpia::Path p : lpia::kPaths) block += params_.scalar_count("lpia." + std::string(lpia::path_name(p)) + ".");
  add("lpia.block", block);
  for (lpia::Path p : lpia::kPaths) {
    add("lpia." + std::string(lpia::path_name(p)), params_.scalar_count("lpia." + std::string(lpia::path_name(p)) + "."));
  }
  add("fusion.gates", params_.scalar_count("fusion.gate."));
  add("fusion.proj", params_.scalar_count("fusion.proj_"));
  add("fusion.score", params_.scalar_count("fusion.score."));
  add("head.teacher", params_.scalar_count("head.teacher."));
  const std::size_t students = params_.scalar_count("head.student_");
  add("head.students", students);
  c.total = params_.scalar_count();
  c.inference_total = c.total - students;
  return c;
}

std::unique_ptr<Model> make_model(const std::string& arch, const ModelConfig& config, std::uint64_t init_seed) {
  if (arch == "lpgnet") return std::make_unique<LpgNet>(config, init_seed);
  if (arch == "stacked") return std::make_unique<StackedTransformer>(config, init_seed);
  throw ContractError("unknown architecture '" + arch + "'");
}

}  // namespace lpgnet
