#pragma once

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

#include "lpgnet/forward.hpp"
#include "lpgnet/params.hpp"
#include "lpgnet/tensor.hpp"

namespace lpgnet::lpia {

/// The four interaction paths. The first letter names the query modality,
/// the second the key/value modality.
enum class Path { tt, aa, at, ta };
inline constexpr std::array<Path, 4> kPaths{Path::tt, Path::aa, Path::at, Path::ta};
std::string_view path_name(Path p);

/// Masked score for invalid keys.
inline constexpr double kMaskFill = -1e9;

struct LpiaConfig {
  std::size_t f_t = 0;
  std::size_t f_a = 0;
  std::size_t d = 64;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  double leaky_slope = 0.01;
  double bn_momentum = 0.1;
  double norm_eps = 1e-5;
  bool use_ffn = true;
};

/// Kernel-size-1 convolution over the utterance axis: a shared per-position affine map.
struct ConvProjection {
  Tensor weight;  // [F_s, d]
  Tensor bias;    // [d]
};

struct PathParams {
  Tensor compress_weight;  // [d, d]  1x1 conv over the pooled context
  Tensor compress_bias;    // [d]
  Tensor bn_gamma;
  Tensor bn_beta;
  Tensor ln_gamma;
  Tensor ln_beta;
  Tensor ffn_w1;  // [d, d_ff]
  Tensor ffn_w2;  // [d_ff, d]
};

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;

  static BatchNormState fresh(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)}; }
};

struct LpiaParams {
  ConvProjection proj_t;
  ConvProjection proj_a;
  std::array<PathParams, 4> paths;

  const PathParams& path(Path p) const { return paths[static_cast<std::size_t>(p)]; }
};

/// Registers every LPIA parameter under "lpia." and returns handles to them.
LpiaParams register_params(ParamStore& store, const LpiaConfig& config, Rng& rng);

Tensor project_conv1d(const Tensor& x, const ConvProjection& projection);

struct AttentionResult {
  Tensor weights;  // [B, U, U]
  Tensor out;      // [B, U, d]
};

/// Single-head scaled dot-product attention. Key j of dialogue b is visible to
/// every query iff mask[b, j] == 1; hidden keys score kMaskFill before softmax.
AttentionResult masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& mask);

/// Two-stage residual enhancement of one path:
///   pooled  = masked mean of attn_out over utterances          [B, d]
///   a_conv  = LeakyReLU(BatchNorm(pooled W_c + b_c))           [B, d]
///   out     = query + a_conv + FFN(a_conv), broadcast over U
///   FFN(x)  = W_2 Dropout(GELU(W_1 LayerNorm(x)))
/// Train mode uses batch statistics and updates state; B = 1 is rejected there.
Tensor enhance(const Tensor& query, const Tensor& attn_out, const Tensor& mask, const PathParams& params,
               BatchNormState& state, const LpiaConfig& config, const ForwardContext& ctx,
               std::string_view dropout_stream);

struct LpiaOutput {
  std::array<Tensor, 4> paths;  // undefined when the path is disabled

  const Tensor& operator[](Path p) const { return paths[static_cast<std::size_t>(p)]; }
  Tensor& operator[](Path p) { return paths[static_cast<std::size_t>(p)]; }
};

using PathSet = std::array<bool, 4>;
inline constexpr PathSet kAllPathsEnabled{true, true, true, true};

/// Runs the enabled paths on already-projected streams. Paths are independent
/// and may run on separate threads; their results do not depend on scheduling.
LpiaOutput lpia_forward(const Tensor& x_t, const Tensor& x_a, const Tensor& mask, const LpiaParams& params,
                        std::array<BatchNormState, 4>& states, const LpiaConfig& config, const ForwardContext& ctx,
                        const PathSet& enabled = kAllPathsEnabled);

}  // namespace lpgnet::lpia
