#pragma once

#include <array>

#include "lpgnet/lpia.hpp"
#include "lpgnet/params.hpp"
#include "lpgnet/tensor.hpp"

namespace lpgnet::fusion {

struct FusionParams {
  std::array<Tensor, 4> gates;  // W_g per stream, indexed by lpia::Path, each [d, d]
  Tensor proj_t_weight;         // [2d, d] over [H_t ; H_at]
  Tensor proj_t_bias;
  Tensor proj_a_weight;         // [2d, d] over [H_a ; H_ta]
  Tensor proj_a_bias;
  Tensor score_weight;          // [d, 1], shared by both modalities

  const Tensor& gate(lpia::Path p) const { return gates[static_cast<std::size_t>(p)]; }
};

/// Registers every fusion parameter under "fusion." and returns handles to them.
FusionParams register_params(ParamStore& store, std::size_t d, Rng& rng);

/// Z = sigmoid(H W_g), returns Z * H. No bias.
Tensor gated_fusion(const Tensor& h, const Tensor& gate_weight);

struct UnimodalFused {
  Tensor t_fused;  // [B, U, d]; undefined when no text-side stream exists
  Tensor a_fused;
};

/// Gates each stream and projects the modality pairs [H_t ; H_at] and
/// [H_a ; H_ta] down to d. When one member of a pair is absent (ablations)
/// the surviving stream fills both halves. identity_gate replaces Z by 1.
UnimodalFused unimodal_fuse(const lpia::LpiaOutput& streams, const FusionParams& params, bool identity_gate = false);

struct FusedFeatures {
  Tensor t_fused;
  Tensor a_fused;
  Tensor alpha_t;  // [B, U]
  Tensor alpha_a;  // [B, U]
  Tensor f_final;  // [B, U, d]
};

/// One scalar score per modality and utterance, s_m = W m_fused, turned into
/// competing weights by a softmax across the two modalities:
///   f_final = alpha_t t_fused + alpha_a a_fused.
/// fixed_half pins alpha to (0.5, 0.5).
FusedFeatures multimodal_fuse(const Tensor& t_fused, const Tensor& a_fused, const Tensor& score_weight,
                              bool fixed_half = false);

/// Flips the sign of the gate-weight gradient while alive. Exists only to
/// show that the gradient checker catches a broken backward pass.
class ScopedGateGradientFault {
 public:
  ScopedGateGradientFault();
  ~ScopedGateGradientFault();
  ScopedGateGradientFault(const ScopedGateGradientFault&) = delete;
  ScopedGateGradientFault& operator=(const ScopedGateGradientFault&) = delete;
};

}  // namespace lpgnet::fusion
