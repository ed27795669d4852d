#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lpgnet/data.hpp"
#include "lpgnet/forward.hpp"
#include "lpgnet/fusion.hpp"
#include "lpgnet/heads.hpp"
#include "lpgnet/lpia.hpp"
#include "lpgnet/params.hpp"

namespace lpgnet {

/// Component removals mirroring the ablation table.
struct Ablation {
  bool no_inter_attention = false;
  bool no_intra_attention = false;
  bool no_ffn = false;
  bool no_dual_gate = false;
  bool text_only = false;
  bool audio_only = false;

  /// "full" or '+'-joined flag names, e.g. "no_ffn+no_dual_gate".
  std::string name() const;
  /// Inverse of name(); ContractError on unknown flags.
  static Ablation parse(const std::string& spec);
  /// ContractError on contradictory combinations.
  void validate() const;
  bool operator==(const Ablation&) const = default;
};

struct ModelConfig {
  std::size_t f_t = 0;
  std::size_t f_a = 0;
  std::size_t classes = 4;
  std::size_t d = 64;
  std::size_t d_ff = 128;
  double dropout = 0.1;
  double tau = 1.0;
  double leaky_slope = 0.01;
  Ablation ablation;
  bool with_students = true;
  heads::KlDirection kl_direction = heads::KlDirection::student_teacher;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Learnable scalars per named group.
struct ParamCount {
  std::vector<std::pair<std::string, std::size_t>> groups;
  std::size_t total = 0;
  /// Excludes parameters that exist only during training (student heads).
  std::size_t inference_total = 0;

  std::size_t group(const std::string& name) const;
};

struct ModelOutput {
  Tensor logits;  // [B, U, C]
  Tensor probs;
  std::optional<heads::StudentOutput> student_t;
  std::optional<heads::StudentOutput> student_a;
  Tensor teacher_soft;  // detached softened teacher distribution
  std::optional<fusion::FusedFeatures> fused;
  std::optional<lpia::LpiaOutput> lpia;
};

/// Surface shared by LPGNet and the stacked-encoder baseline so that one
/// trainer, evaluator and benchmark serve both.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::string arch() const = 0;
  virtual const ModelConfig& config() const = 0;
  virtual ModelOutput forward(const data::DialogueBatch& batch, const ForwardContext& ctx) = 0;
  virtual heads::LossBundle loss(const ModelOutput& out, const data::DialogueBatch& batch,
                                 const heads::LossWeights& lambdas) const = 0;
  virtual ParamStore& params() = 0;
  virtual const ParamStore& params() const = 0;
  virtual BufferStore buffers() const = 0;
  virtual void load_buffers(const BufferStore& buffers) = 0;
  virtual ParamCount param_count() const = 0;
};

class LpgNet final : public Model {
 public:
  LpgNet(ModelConfig config, std::uint64_t init_seed);

  std::string arch() const override { return "lpgnet"; }
  const ModelConfig& config() const override { return config_; }
  ModelOutput forward(const data::DialogueBatch& batch, const ForwardContext& ctx) override;
  heads::LossBundle loss(const ModelOutput& out, const data::DialogueBatch& batch,
                         const heads::LossWeights& lambdas) const override;
  ParamStore& params() override { return params_; }
  const ParamStore& params() const override { return params_; }
  BufferStore buffers() const override;
  void load_buffers(const BufferStore& buffers) override;
  ParamCount param_count() const override;

  const lpia::LpiaParams& lpia_params() const { return lpia_; }
  const fusion::FusionParams& fusion_params() const { return fusion_; }
  const heads::HeadParams& head_params() const { return heads_; }
  std::array<lpia::BatchNormState, 4>& bn_states() { return bn_states_; }
  const lpia::LpiaConfig& lpia_config() const { return lpia_config_; }

 private:
  ModelConfig config_;
  lpia::LpiaConfig lpia_config_;
  ParamStore params_;
  lpia::LpiaParams lpia_;
  fusion::FusionParams fusion_;
  heads::HeadParams heads_;
  std::array<lpia::BatchNormState, 4> bn_states_;
};

/// Throws DimensionError/SchemaError when batch features or labels do not fit config.
void check_batch(const ModelConfig& config, const data::DialogueBatch& batch);

/// "lpgnet" or "stacked".
std::unique_ptr<Model> make_model(const std::string& arch, const ModelConfig& config, std::uint64_t init_seed);

}  // namespace lpgnet
