#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "lvat/nets.hpp"
#include "lvat/rng.hpp"
#include "lvat/tensor.hpp"

namespace lvat {

// Invertible map built from affine coupling layers. Each coupling leaves one
// half of the columns untouched, feeds them through a conditioner net and
// rescales/shifts the other half; a fixed column permutation after every two
// couplings lets information mix across the split.
struct FlowConfig {
  std::size_t input_dim = 2;
  std::size_t couplings = 6;
  std::vector<std::size_t> cond_hidden = {64, 64};
  // The conditioner emits a raw log-scale that is squashed through
  // scale_cap * tanh, which bounds every Jacobian factor away from 0 and inf.
  double scale_cap = 2.0;
  double leaky_slope = 0.1;

  void validate() const;
};

struct FlowLayer {
  enum class Kind { Coupling, Permutation };
  Kind kind = Kind::Coupling;
  // Coupling only: column split and the parameter prefix of its conditioner.
  std::vector<std::size_t> pass_idx;
  std::vector<std::size_t> trans_idx;
  std::string prefix;
  // Permutation only: out[:, j] = in[:, perm[j]].
  std::vector<std::size_t> perm;
};

struct FlowModel {
  FlowConfig config;
  std::vector<FlowLayer> layers;
  ParamSet params;
};

// Conditioner final layers start at zero, so a fresh flow is an exact volume
// preserving column shuffle (identity up to the permutations).
FlowModel make_flow(const FlowConfig& cfg, std::uint64_t seed);

// A flow with no layers at all: forward and inverse return their argument
// unchanged and the log-determinant is identically zero.
FlowModel make_identity_flow(std::size_t input_dim);

struct FlowForward {
  Tensor z;        // [B x D]
  Tensor log_det;  // [B], log |det dz/dx| per sample
};

// Both directions are built from tape ops, so they are differentiable when
// x (or z) and the parameters are recorded.
FlowForward flow_forward(const FlowModel& m, const ParamSet& params, const Tensor& x);
Tensor flow_inverse(const FlowModel& m, const ParamSet& params, const Tensor& z);

// Mean log density of x under the flow-transformed standard normal base.
Tensor flow_log_likelihood(const FlowModel& m, const ParamSet& params, const Tensor& x);

// Draws base samples and maps them back through the inverse (value only).
Tensor flow_sample(const FlowModel& m, std::size_t n, SplitMix64& rng);

nlohmann::json flow_header(const FlowModel& m);
// Rebuilds the layer structure; parameters come from the checkpoint payload.
FlowModel flow_model_from_header(const nlohmann::json& header);

}  // namespace lvat
