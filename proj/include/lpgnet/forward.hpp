#pragma once

#include <cstdint>
#include <string_view>

#include "lpgnet/rng.hpp"

namespace lpgnet {

enum class Mode { train, eval };

/// Per-call switches shared by every layer of a forward pass.
struct ForwardContext {
  Mode mode = Mode::eval;
  /// Build the self-distillation student heads. Off for inference.
  bool students = false;
  /// Root of every dropout stream drawn during this pass.
  std::uint64_t dropout_seed = 0;

  bool training() const { return mode == Mode::train; }
  Rng stream(std::string_view name) const { return Rng(dropout_seed, name); }
};

}  // namespace lpgnet
