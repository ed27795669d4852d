#include "lpgnet/lpia.hpp"

#include <cmath>
#include <future>
#include <string>

#include "lpgnet/errors.hpp"
#include "lpgnet/parallel.hpp"

namespace lpgnet::lpia {

std::string_view path_name(Path p) {
  switch (p) {
    case Path::tt: return "tt";
    case Path::aa: return "aa";
    case Path::at: return "at";
    case Path::ta: return "ta";
  }
  return "?";
}

LpiaParams register_params(ParamStore& store, const LpiaConfig& c, Rng& rng) {
  if (c.d_ff != 2 * c.d && c.d_ff != 4 * c.d) {
    throw ContractError("d_ff must be 2d or 4d (d=" + std::to_string(c.d) + ", d_ff=" + std::to_string(c.d_ff) + ")");
  }
  LpiaParams p;
  auto conv = [&](const std::string& name, std::size_t f_in) {
    ConvProjection proj;
    proj.weight = store.add("lpia." + name + ".weight", init_uniform({f_in, c.d}, f_in, rng));
    proj.bias = store.add("lpia." + name + ".bias", init_uniform({c.d}, f_in, rng));
    return proj;
  };
  p.proj_t = conv("proj_t", c.f_t);
  p.proj_a = conv("proj_a", c.f_a);
  for (Path path : kPaths) {
    const std::string pre = "lpia." + std::string(path_name(path)) + ".";
    PathParams& pp = p.paths[static_cast<std::size_t>(path)];
    pp.compress_weight = store.add(pre + "compress.weight", init_uniform({c.d, c.d}, c.d, rng));
    pp.compress_bias = store.add(pre + "compress.bias", init_uniform({c.d}, c.d, rng));
    pp.bn_gamma = store.add(pre + "bn.gamma", Tensor::full({c.d}, 1.0, true));
    pp.bn_beta = store.add(pre + "bn.beta", Tensor::zeros({c.d}, true));
    pp.ln_gamma = store.add(pre + "ln.gamma", Tensor::full({c.d}, 1.0, true));
    pp.ln_beta = store.add(pre + "ln.beta", Tensor::zeros({c.d}, true));
    pp.ffn_w1 = store.add(pre + "ffn.w1", init_uniform({c.d, c.d_ff}, c.d, rng));
    pp.ffn_w2 = store.add(pre + "ffn.w2", init_uniform({c.d_ff, c.d}, c.d_ff, rng));
  }
  return p;
}

Tensor project_conv1d(const Tensor& x, const ConvProjection& projection) {
  if (x.rank() != 3) throw DimensionError("project_conv1d: expected [B, U, F], got " + shape_str(x.shape()));
  if (x.dim(2) != projection.weight.dim(0)) {
    throw DimensionError("project_conv1d: feature dimension " + std::to_string(x.dim(2)) +
                         " does not match configured " + std::to_string(projection.weight.dim(0)));
  }
  return linear(x, projection.weight, projection.bias);
}

AttentionResult masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("masked_attention: Q/K/V shapes " + shape_str(q.shape()) + ", " + shape_str(k.shape()) +
                         ", " + shape_str(v.shape()));
  }
  const std::size_t b = q.dim(0), u = q.dim(1), d = q.dim(2);
  if (mask.shape() != Shape{b, u}) {
    throw DimensionError("masked_attention: mask " + shape_str(mask.shape()) + " for inputs " + shape_str(q.shape()));
  }
  std::vector<std::uint8_t> keep(b * u * u);
  for (std::size_t s = 0; s < b; ++s) {
    bool any = false;
    for (std::size_t j = 0; j < u; ++j) any = any || mask[s * u + j] != 0.0;
    if (!any) throw ContractError("masked_attention: dialogue " + std::to_string(s) + " has no valid utterance");
    for (std::size_t i = 0; i < u; ++i)
      for (std::size_t j = 0; j < u; ++j) keep[(s * u + i) * u + j] = mask[s * u + j] != 0.0;
  }
  Tensor scores = scale(batched_matmul(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor weights = softmax_lastdim(masked_fill(scores, keep, kMaskFill));
  return {weights, batched_matmul(weights, v)};
}

Tensor enhance(const Tensor& query, const Tensor& attn_out, const Tensor& mask, const PathParams& params,
               BatchNormState& state, const LpiaConfig& config, const ForwardContext& ctx,
               std::string_view dropout_stream) {
  if (query.shape() != attn_out.shape()) {
    throw DimensionError("enhance: query " + shape_str(query.shape()) + " vs attention output " +
                         shape_str(attn_out.shape()));
  }
  const std::size_t u = query.dim(1);

  // Stage 1: global compression. The 1x1 conv over a [B, d] summary is a d->d linear map.
  Tensor pooled = masked_mean_axis1(attn_out, mask);
  Tensor z = linear(pooled, params.compress_weight, params.compress_bias);
  Tensor normed;
  if (ctx.training()) {
    if (z.dim(0) < 2) throw ContractError("enhance: batch-norm training needs at least 2 dialogues per batch");
    BatchStats stats;
    normed = batch_norm_train(z, params.bn_gamma, params.bn_beta, config.norm_eps, &stats);
    const double m = config.bn_momentum;
    for (std::size_t j = 0; j < stats.mean.size(); ++j) {
      state.running_mean[j] = (1.0 - m) * state.running_mean[j] + m * stats.mean[j];
      state.running_var[j] = (1.0 - m) * state.running_var[j] + m * stats.var_unbiased[j];
    }
  } else {
    normed = batch_norm_eval(z, params.bn_gamma, params.bn_beta, state.running_mean, state.running_var,
                             config.norm_eps);
  }
  Tensor a_conv = leaky_relu(normed, config.leaky_slope);

  // Stage 2: broadcast, position-wise FFN, residual with the query stream.
  Tensor a_conv_seq = broadcast_axis1(a_conv, u);
  Tensor out = add(query, a_conv_seq);
  if (!config.use_ffn) return out;

  auto ffn = [&](const Tensor& x) {
    Rng rng = ctx.stream(dropout_stream);
    Tensor h = gelu(linear(layer_norm(x, params.ln_gamma, params.ln_beta, config.norm_eps), params.ffn_w1));
    return linear(dropout(h, config.dropout, ctx.training(), rng), params.ffn_w2);
  };
  // Every position sees the same a_conv row, so without dropout the FFN can run
  // once per dialogue and be broadcast; the values are identical.
  Tensor ffn_seq = ctx.training() && config.dropout > 0.0 ? ffn(a_conv_seq) : broadcast_axis1(ffn(a_conv), u);
  return add(out, ffn_seq);
}

LpiaOutput lpia_forward(const Tensor& x_t, const Tensor& x_a, const Tensor& mask, const LpiaParams& params,
                        std::array<BatchNormState, 4>& states, const LpiaConfig& config, const ForwardContext& ctx,
                        const PathSet& enabled) {
  auto run = [&](Path p) {
    const Tensor& query = (p == Path::tt || p == Path::ta) ? x_t : x_a;
    const Tensor& keys = (p == Path::tt || p == Path::at) ? x_t : x_a;
    if (!query.defined() || !keys.defined()) {
      throw ContractError("lpia path " + std::string(path_name(p)) + " needs a missing modality");
    }
    const auto idx = static_cast<std::size_t>(p);
    const AttentionResult attn = masked_attention(query, keys, keys, mask);
    return enhance(query, attn.out, mask, params.paths[idx], states[idx], config, ctx,
                   "lpia." + std::string(path_name(p)) + ".dropout");
  };

  LpiaOutput out;
  if (max_threads() > 1) {
    std::array<std::future<Tensor>, 4> jobs;
    for (Path p : kPaths)
      if (enabled[static_cast<std::size_t>(p)]) jobs[static_cast<std::size_t>(p)] = std::async(std::launch::async, run, p);
    for (Path p : kPaths)
      if (enabled[static_cast<std::size_t>(p)]) out[p] = jobs[static_cast<std::size_t>(p)].get();
  } else {
    for (Path p : kPaths)
      if (enabled[static_cast<std::size_t>(p)]) out[p] = run(p);
  }
  return out;
}

}  // namespace lpgnet::lpia
