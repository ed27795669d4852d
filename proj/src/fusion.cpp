#include "lpgnet/fusion.hpp"

#include <atomic>
#include <cmath>
#include <string>

#include "lpgnet/errors.hpp"

namespace lpgnet::fusion {
namespace {

std::atomic<int> g_gate_fault{0};

}  // namespace

ScopedGateGradientFault::ScopedGateGradientFault() { ++g_gate_fault; }
ScopedGateGradientFault::~ScopedGateGradientFault() { --g_gate_fault; }

FusionParams register_params(ParamStore& store, std::size_t d, Rng& rng) {
  FusionParams p;
  for (lpia::Path path : lpia::kPaths) {
    p.gates[static_cast<std::size_t>(path)] =
        store.add("fusion.gate." + std::string(lpia::path_name(path)), init_uniform({d, d}, d, rng));
  }
  p.proj_t_weight = store.add("fusion.proj_t.weight", init_uniform({2 * d, d}, 2 * d, rng));
  p.proj_t_bias = store.add("fusion.proj_t.bias", init_uniform({d}, 2 * d, rng));
  p.proj_a_weight = store.add("fusion.proj_a.weight", init_uniform({2 * d, d}, 2 * d, rng));
  p.proj_a_bias = store.add("fusion.proj_a.bias", init_uniform({d}, 2 * d, rng));
  p.score_weight = store.add("fusion.score.weight", init_uniform({d, 1}, d, rng));
  return p;
}

Tensor gated_fusion(const Tensor& h, const Tensor& gate_weight) {
  if (h.rank() == 0) throw DimensionError("gated_fusion: scalar input");
  const std::size_t d = h.shape().back();
  if (gate_weight.shape() != Shape{d, d}) {
    throw DimensionError("gated_fusion: gate " + shape_str(gate_weight.shape()) + " for input " + shape_str(h.shape()));
  }
  const std::size_t rows = h.numel() / d;
  const auto hv = h.data();
  const auto wv = gate_weight.data();
  std::vector<double> z(h.numel(), 0.0), out(h.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    double* zr = &z[r * d];
    for (std::size_t k = 0; k < d; ++k) {
      const double a = hv[r * d + k];
      for (std::size_t j = 0; j < d; ++j) zr[j] += a * wv[k * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) {
      const double s = zr[j];
      zr[j] = s >= 0 ? 1.0 / (1.0 + std::exp(-s)) : std::exp(s) / (1.0 + std::exp(s));
      out[r * d + j] = zr[j] * hv[r * d + j];
    }
  }
  const double sign = g_gate_fault.load() > 0 ? -1.0 : 1.0;
  return make_op("gated_fusion", h.shape(), std::move(out), {h, gate_weight},
                 [rows, d, sign, z = std::move(z)](OpContext& c) {
                   const auto gy = c.out_grad();
                   const auto hv = c.input(0);
                   const auto wv = c.input(1);
                   auto gh = c.input_grad(0);
                   auto gw = c.input_grad(1);
                   std::vector<double> da(d);
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t j = 0; j < d; ++j) {
                       const double zj = z[r * d + j];
                       da[j] = gy[r * d + j] * hv[r * d + j] * zj * (1.0 - zj);
                       if (!gh.empty()) gh[r * d + j] += gy[r * d + j] * zj;
                     }
                     for (std::size_t k = 0; k < d; ++k) {
                       const double hk = hv[r * d + k];
                       double acc = 0.0;
                       for (std::size_t j = 0; j < d; ++j) {
                         acc += da[j] * wv[k * d + j];
                         if (!gw.empty()) gw[k * d + j] += sign * hk * da[j];
                       }
                       if (!gh.empty()) gh[r * d + k] += acc;
                     }
                   }
                 });
}

UnimodalFused unimodal_fuse(const lpia::LpiaOutput& streams, const FusionParams& params, bool identity_gate) {
  using lpia::Path;
  auto gated = [&](Path p) -> Tensor {
    const Tensor& h = streams[p];
    if (!h.defined()) return {};
    return identity_gate ? h : gated_fusion(h, params.gate(p));
  };
  auto pair = [](const Tensor& own, const Tensor& cross, const Tensor& w, const Tensor& b) -> Tensor {
    if (!own.defined() && !cross.defined()) return {};
    const Tensor& first = own.defined() ? own : cross;
    const Tensor& second = cross.defined() ? cross : own;
    return linear(concat_lastdim({first, second}), w, b);
  };
  UnimodalFused out;
  out.t_fused = pair(gated(Path::tt), gated(Path::at), params.proj_t_weight, params.proj_t_bias);
  out.a_fused = pair(gated(Path::aa), gated(Path::ta), params.proj_a_weight, params.proj_a_bias);
  if (!out.t_fused.defined() && !out.a_fused.defined()) throw ContractError("unimodal_fuse: no streams present");
  return out;
}

FusedFeatures multimodal_fuse(const Tensor& t_fused, const Tensor& a_fused, const Tensor& score_weight,
                              bool fixed_half) {
  if (t_fused.shape() != a_fused.shape() || t_fused.rank() < 2) {
    throw DimensionError("multimodal_fuse: shapes " + shape_str(t_fused.shape()) + " and " +
                         shape_str(a_fused.shape()));
  }
  const Shape rows(t_fused.shape().begin(), t_fused.shape().end() - 1);
  FusedFeatures f{t_fused, a_fused, {}, {}, {}};
  if (fixed_half) {
    f.alpha_t = Tensor::full(rows, 0.5);
    f.alpha_a = Tensor::full(rows, 0.5);
  } else {
    Tensor scores = concat_lastdim({linear(t_fused, score_weight), linear(a_fused, score_weight)});
    Tensor alpha = softmax_lastdim(scores);
    f.alpha_t = reshape(slice_lastdim(alpha, 0, 1), rows);
    f.alpha_a = reshape(slice_lastdim(alpha, 1, 1), rows);
  }
  f.f_final = add(scale_rows(t_fused, f.alpha_t), scale_rows(a_fused, f.alpha_a));
  return f;
}

}  // namespace lpgnet::fusion
