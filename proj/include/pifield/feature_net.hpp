#pragma once

#include <array>
#include <vector>

#include "pifield/nn.hpp"

namespace pifield {

struct EncoderConfig {
  // Per-scale encoder widths; spatial strides are {1,2,4,8}.
  std::array<int, 4> channels{16, 32, 64, 128};
  // Widths of the fused top-down stack at each scale.
  std::array<int, 4> stack_channels{16, 32, 64, 96};
  int cam_head = 32;   // attention query/key channels
  int gam_local = 32;  // contrast-branch output channels
  int gam_dilate = 2;
  void validate() const;
};

struct CbamBlock {
  Dense mlp1, mlp2;     // channel gate: pooled -> hidden -> channels
  Conv2dLayer spatial;  // 7x7 over [mean, max] planes
};

struct FeatureNet {
  EncoderConfig cfg;
  // Each encoder stage: strided 3x3 + refine 3x3, both leaky-relu.
  std::array<Conv2dLayer, 4> rgb_down, rgb_refine;
  std::array<Conv2dLayer, 4> depth_down, depth_refine;
  // Cross-attention fusion at the deepest scale.
  Conv2dLayer theta, phi, g_r, g_d;  // 1x1
  CbamBlock r_r, r_d;
  // Contrast enrichment.
  Conv2dLayer f_r, f_l, f_g;  // 1x1, 1x1 (shared contrast), 3x3 dilated
  // Top-down fusion convs and per-scale depth heads (heads start at zero so
  // the decoder is the identity on the masked input before training).
  std::array<Conv2dLayer, 4> topdown;
  std::array<Conv2dLayer, 4> depth_head;
};

FeatureNet make_feature_net(ParamStore& ps, const EncoderConfig& cfg, Rng& rng);

struct EncodedView {
  std::array<Var, 4> rgb_skips, depth_skips;
  Var f_r, f_d;  // deepest-scale features (aliases of skips[3])
};

// Masks both rasters, then runs the two independent encoders.
// rgb [3,H,W], depth [1,H,W], mask [1,H,W]; H and W divisible by 8.
EncodedView encode(const FeatureNet& net, const Tensor& rgb,
                   const Tensor& depth, const Tensor& mask);

// Position-attention map over flattened deepest-scale positions; each row is
// one output position's distribution (rows sum to 1).
Var cam_attention(const FeatureNet& net, const Var& F_r);

// Y = R_r(g_r(F_r) x kappa) || R_d(g_d(F_d) x kappa).
Var cam_fuse(const FeatureNet& net, const Var& F_r, const Var& F_d);

// Splits Y into equal halves (rgb, depth), forms the two depth contrasts
// against the dilated local field and the global average, and concatenates
// with the passed-through rgb branch.
Var gam_enrich(const FeatureNet& net, const Var& Y);

// Top-down pathway: conv the enriched deepest feature, then repeatedly
// upsample, concatenate both skips, and conv.
std::array<Var, 4> build_feature_stack(const FeatureNet& net,
                                       const EncodedView& enc,
                                       const Var& enriched);

struct DepthDecode {
  std::array<Var, 4> d_rf;     // refined depth per scale, masked
  std::array<Tensor, 4> d_in;  // subsampled masked input depth
  std::array<Tensor, 4> mask;  // subsampled mask
};

// Residual heads over the stack: d_rf^s = (subsampled depth + head) * mask.
DepthDecode decode_depth(const FeatureNet& net, const std::array<Var, 4>& stack,
                         const Tensor& depth, const Tensor& mask);

// Transformer encoder over per-view tokens followed by the token mean.
// view_tokens[v] is [M, C]: row m is view v's token for query point m.
Var aggregate_views(const TransformerParams& tr, const std::vector<Var>& view_tokens);

}  // namespace pifield
