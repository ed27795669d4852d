#include "lpgnet/baseline.hpp"

#include "lpgnet/errors.hpp"

namespace lpgnet {

StackedTransformer::StackedTransformer(ModelConfig config, std::uint64_t init_seed) : config_(std::move(config)) {
  if (!(config_.ablation == Ablation{})) throw ContractError("the stacked baseline supports no ablations");
  config_.with_students = false;
  const std::size_t d = config_.d, ff = config_.d_ff;
  Rng rng(init_seed, "init");
  auto conv = [&](const std::string& name, std::size_t f_in) {
    lpia::ConvProjection p;
    p.weight = params_.add("stacked." + name + ".weight", init_uniform({f_in, d}, f_in, rng));
    p.bias = params_.add("stacked." + name + ".bias", init_uniform({d}, f_in, rng));
    return p;
  };
  proj_t_ = conv("proj_t", config_.f_t);
  proj_a_ = conv("proj_a", config_.f_a);

  auto layer = [&](const std::string& pre) {
    EncoderLayer l;
    auto w = [&](const std::string& n, std::size_t in, std::size_t out) {
      return params_.add(pre + n, init_uniform({in, out}, in, rng));
    };
    auto b = [&](const std::string& n, std::size_t fan_in, std::size_t size) {
      return params_.add(pre + n, init_uniform({size}, fan_in, rng));
    };
    l.wq = w("wq", d, d);
    l.bq = b("bq", d, d);
    l.wk = w("wk", d, d);
    l.bk = b("bk", d, d);
    l.wv = w("wv", d, d);
    l.bv = b("bv", d, d);
    l.wo = w("wo", d, d);
    l.bo = b("bo", d, d);
    l.ln1_gamma = params_.add(pre + "ln1.gamma", Tensor::full({d}, 1.0, true));
    l.ln1_beta = params_.add(pre + "ln1.beta", Tensor::zeros({d}, true));
    l.w1 = w("ffn.w1", d, ff);
    l.b1 = b("ffn.b1", d, ff);
    l.w2 = w("ffn.w2", ff, d);
    l.b2 = b("ffn.b2", ff, d);
    l.ln2_gamma = params_.add(pre + "ln2.gamma", Tensor::full({d}, 1.0, true));
    l.ln2_beta = params_.add(pre + "ln2.beta", Tensor::zeros({d}, true));
    return l;
  };
  for (std::size_t i = 0; i < kLayers; ++i) enc_t_[i] = layer("stacked.encoder.t." + std::to_string(i) + ".");
  for (std::size_t i = 0; i < kLayers; ++i) enc_a_[i] = layer("stacked.encoder.a." + std::to_string(i) + ".");
  head_.weight = params_.add("stacked.head.weight", init_uniform({2 * d, config_.classes}, 2 * d, rng));
  head_.bias = params_.add("stacked.head.bias", init_uniform({config_.classes}, 2 * d, rng));
}

Tensor StackedTransformer::encode(const Tensor& input, const Tensor& mask,
                                  const std::array<EncoderLayer, kLayers>& layers, const ForwardContext& ctx,
                                  const std::string& stream) const {
  Tensor x = input;
  const double p = config_.dropout;
  for (std::size_t i = 0; i < kLayers; ++i) {
    const auto& l = layers[i];
    Rng rng = ctx.stream(stream + "." + std::to_string(i));
    auto attn = lpia::masked_attention(linear(x, l.wq, l.bq), linear(x, l.wk, l.bk), linear(x, l.wv, l.bv), mask);
    Tensor o = dropout(linear(attn.out, l.wo, l.bo), p, ctx.training(), rng);
    x = layer_norm(add(x, o), l.ln1_gamma, l.ln1_beta);
    Tensor h = dropout(gelu(linear(x, l.w1, l.b1)), p, ctx.training(), rng);
    Tensor f = dropout(linear(h, l.w2, l.b2), p, ctx.training(), rng);
    x = layer_norm(add(x, f), l.ln2_gamma, l.ln2_beta);
  }
  return x;
}

ModelOutput StackedTransformer::forward(const data::DialogueBatch& batch, const ForwardContext& ctx) {
  check_batch(config_, batch);
  Tensor t = encode(lpia::project_conv1d(batch.text, proj_t_), batch.mask, enc_t_, ctx, "stacked.t");
  Tensor a = encode(lpia::project_conv1d(batch.audio, proj_a_), batch.mask, enc_a_, ctx, "stacked.a");
  auto cls = heads::classify(concat_lastdim({t, a}), head_);
  ModelOutput out;
  out.logits = cls.logits;
  out.probs = cls.probs;
  return out;
}

heads::LossBundle StackedTransformer::loss(const ModelOutput& out, const data::DialogueBatch& batch,
                                           const heads::LossWeights& lambdas) const {
  heads::LossTerms terms;
  terms.task = heads::task_loss(out.probs, batch.labels);
  return heads::total_loss(terms, lambdas);
}

ParamCount StackedTransformer::param_count() const {
  ParamCount c;
  c.groups.emplace_back("stacked.proj", params_.scalar_count("stacked.proj_"));
  c.groups.emplace_back("stacked.encoders", params_.scalar_count("stacked.encoder."));
  c.groups.emplace_back("stacked.encoder.t", params_.scalar_count("stacked.encoder.t."));
  c.groups.emplace_back("stacked.encoder.a", params_.scalar_count("stacked.encoder.a."));
  c.groups.emplace_back("stacked.head", params_.scalar_count("stacked.head."));
  c.total = params_.scalar_count();
  c.inference_total = c.total;
  return c;
}

}  // namespace lpgnet
