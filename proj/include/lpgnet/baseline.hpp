#pragma once

#include <array>
#include <cstdint>

#include "lpgnet/model.hpp"

namespace lpgnet {

/// Efficiency baseline: per modality, the same kernel-size-1 projection as
/// LPGNet followed by a stack of standard post-norm Transformer encoder layers
/// (single-head attention with W_Q/W_K/W_V/W_O, GELU FFN, two layer norms);
/// the two streams are concatenated into a linear classifier.
class StackedTransformer final : public Model {
 public:
  static constexpr std::size_t kLayers = 2;

  StackedTransformer(ModelConfig config, std::uint64_t init_seed);

  std::string arch() const override { return "stacked"; }
  const ModelConfig& config() const override { return config_; }
  ModelOutput forward(const data::DialogueBatch& batch, const ForwardContext& ctx) override;
  heads::LossBundle loss(const ModelOutput& out, const data::DialogueBatch& batch,
                         const heads::LossWeights& lambdas) const override;
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  BufferStore buffers() const override { return {}; }
  void load_buffers(const BufferStore&) override {}
  ParamCount param_count() const override;

 private:
  struct EncoderLayer {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln1_gamma, ln1_beta;
    Tensor w1, b1, w2, b2;
    Tensor ln2_gamma, ln2_beta;
  };

  Tensor encode(const Tensor& x, const Tensor& mask, const std::array<EncoderLayer, kLayers>& layers,
                const ForwardContext& ctx, const std::string& stream) const;

  ModelConfig config_;
  ParamStore params_;
  lpia::ConvProjection proj_t_, proj_a_;
  std::array<EncoderLayer, kLayers> enc_t_, enc_a_;
  heads::LinearHead head_;
};

}  // namespace lpgnet
