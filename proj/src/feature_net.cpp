#include "pifield/feature_net.hpp"

#include <cmath>

namespace pifield {

namespace {
constexpr float kSlope = 0.01f;

Var lrelu(const Var& x) { return leaky_relu(x, kSlope); }

Tensor subsample(const Tensor& t, int stride) {
  const int h = t.shape[1], w = t.shape[2];
  const int oh = h / stride, ow = w / stride;
  Tensor out({1, oh, ow}, std::vector<float>(static_cast<size_t>(oh) * ow));
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      out.data[static_cast<size_t>(y) * ow + x] =
          t.data[static_cast<size_t>(y) * stride * w + static_cast<size_t>(x) * stride];
  return out;
}

Var flatten_hw(const Var& x) {
  return reshape(x, {x->value.shape[0], x->value.shape[1] * x->value.shape[2]});
}

Var unflatten_hw(const Var& x, int h, int w) {
  return reshape(x, {x->value.shape[0], h, w});
}

Var cbam(const CbamBlock& blk, const Var& x) {
  // Channel gate.
  const Var pooled = reshape(global_avg_pool(x), {1, x->value.shape[0]});
  const Var gate_c =
      reshape(sigmoid(blk.mlp2(relu(blk.mlp1(pooled)))), {x->value.shape[0], 1, 1});
  const Var xc = mul_channel_bcast(gate_c, x);
  // Spatial gate.
  const Var planes = concat_channels({channel_mean(xc), channel_max(xc)});
  const Var gate_s = sigmoid(blk.spatial(planes));
  const Var xs = mul_plane_bcast(gate_s, xc);
  return add(x, xs);
}
}  // namespace

void EncoderConfig::validate() const {
  for (int c : channels)
    if (c <= 0) throw ValueError("encoder config: channel widths must be positive");
  for (int c : stack_channels)
    if (c <= 0) throw ValueError("encoder config: stack widths must be positive");
  if (cam_head <= 0 || gam_local <= 0)
    throw ValueError("encoder config: head widths must be positive");
  if (gam_dilate <= 0) throw ValueError("encoder config: dilate rate must be positive");
}

FeatureNet make_feature_net(ParamStore& ps, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  FeatureNet net;
  net.cfg = cfg;
  const auto& ch = cfg.channels;
  for (int s = 0; s < 4; ++s) {
    const int cin_rgb = s == 0 ? 3 : ch[static_cast<size_t>(s - 1)];
    const int cin_d = s == 0 ? 1 : ch[static_cast<size_t>(s - 1)];
    const int stride = s == 0 ? 1 : 2;
    const std::string tag = std::to_string(s);
    net.rgb_down[static_cast<size_t>(s)] = Conv2dLayer(
        ps, "enc.rgb.down" + tag, cin_rgb, ch[static_cast<size_t>(s)], 3, rng, stride);
    net.rgb_refine[static_cast<size_t>(s)] =
        Conv2dLayer(ps, "enc.rgb.refine" + tag, ch[static_cast<size_t>(s)],
                    ch[static_cast<size_t>(s)], 3, rng);
    net.depth_down[static_cast<size_t>(s)] = Conv2dLayer(
        ps, "enc.depth.down" + tag, cin_d, ch[static_cast<size_t>(s)], 3, rng, stride);
    net.depth_refine[static_cast<size_t>(s)] =
        Conv2dLayer(ps, "enc.depth.refine" + tag, ch[static_cast<size_t>(s)],
                    ch[static_cast<size_t>(s)], 3, rng);
  }
  const int c3 = ch[3];
  net.theta = Conv2dLayer(ps, "cam.theta", c3, cfg.cam_head, 1, rng);
  net.phi = Conv2dLayer(ps, "cam.phi", c3, cfg.cam_head, 1, rng);
  net.g_r = Conv2dLayer(ps, "cam.g_r", c3, c3, 1, rng);
  net.g_d = Conv2dLayer(ps, "cam.g_d", c3, c3, 1, rng);
  const int hidden = std::max(c3 / 4, 4);
  const auto make_cbam = [&](const std::string& prefix) {
    CbamBlock blk;
    blk.mlp1 = Dense(ps, prefix + ".mlp1", c3, hidden, rng);
    blk.mlp2 = Dense(ps, prefix + ".mlp2", hidden, c3, rng);
    blk.spatial = Conv2dLayer(ps, prefix + ".spatial", 2, 1, 7, rng);
    return blk;
  };
  net.r_r = make_cbam("cam.r_r");
  net.r_d = make_cbam("cam.r_d");

  net.f_r = Conv2dLayer(ps, "gam.f_r", c3, cfg.gam_local, 1, rng);
  net.f_l = Conv2dLayer(ps, "gam.f_l", c3, cfg.gam_local, 1, rng);
  net.f_g = Conv2dLayer(ps, "gam.f_g", c3, cfg.gam_local, 3, rng, 1, cfg.gam_dilate);

  for (int s = 0; s < 4; ++s) {
    const std::string tag = std::to_string(s);
    const int cout = cfg.stack_channels[static_cast<size_t>(s)];
    const int cin = s == 3 ? 3 * cfg.gam_local
                           : cfg.stack_channels[static_cast<size_t>(s + 1)] +
                                 2 * ch[static_cast<size_t>(s)];
    net.topdown[static_cast<size_t>(s)] =
        Conv2dLayer(ps, "stack.fuse" + tag, cin, cout, 3, rng);
    net.depth_head[static_cast<size_t>(s)] =
        Conv2dLayer(ps, "depth.head" + tag, cout, 1, 3, rng);
    // Residual identity at initialization.
    net.depth_head[static_cast<size_t>(s)].K->value =
        Tensor::zeros(net.depth_head[static_cast<size_t>(s)].K->value.shape);
  }
  return net;
}

EncodedView encode(const FeatureNet& net, const Tensor& rgb, const Tensor& depth,
                   const Tensor& mask) {
  if (rgb.rank() != 3 || rgb.shape[0] != 3)
    throw ShapeError("encode: rgb must be [3,H,W]");
  if (depth.rank() != 3 || depth.shape[0] != 1)
    throw ShapeError("encode: depth must be [1,H,W]");
  if (!depth.same_shape(mask))
    throw ShapeError("encode: depth and mask extents disagree");
  if (rgb.shape[1] != depth.shape[1] || rgb.shape[2] != depth.shape[2])
    throw ShapeError("encode: rgb and depth extents disagree");
  if (rgb.shape[1] % 8 != 0 || rgb.shape[2] % 8 != 0)
    throw ShapeError("encode: extents must be divisible by 8");

  const Var m = constant(mask);
  Var xr = mul_plane_bcast(m, constant(rgb));
  Var xd = mul_plane_bcast(m, constant(depth));

  EncodedView out;
  for (size_t s = 0; s < 4; ++s) {
    xr = lrelu(net.rgb_refine[s](lrelu(net.rgb_down[s](xr))));
    xd = lrelu(net.depth_refine[s](lrelu(net.depth_down[s](xd))));
    out.rgb_skips[s] = xr;
    out.depth_skips[s] = xd;
  }
  out.f_r = out.rgb_skips[3];
  out.f_d = out.depth_skips[3];
  return out;
}

Var cam_attention(const FeatureNet& net, const Var& F_r) {
  const Var q = flatten_hw(net.theta(F_r));  // [Ca, M]
  const Var k = flatten_hw(net.phi(F_r));
  return softmax_rows(matmul(transpose2d(q), k));  // [M, M]
}

Var cam_fuse(const FeatureNet& net, const Var& F_r, const Var& F_d) {
  if (F_r->value.rank() != 3 || F_d->value.rank() != 3 ||
      F_r->value.shape[1] != F_d->value.shape[1] ||
      F_r->value.shape[2] != F_d->value.shape[2])
    throw ShapeError("cam_fuse: spatial extents disagree");
  const int h = F_r->value.shape[1], w = F_r->value.shape[2];
  const Var kappa_t = transpose2d(cam_attention(net, F_r));  // [M,M] columns=rows
  const Var ar = unflatten_hw(matmul(flatten_hw(net.g_r(F_r)), kappa_t), h, w);
  const Var ad = unflatten_hw(matmul(flatten_hw(net.g_d(F_d)), kappa_t), h, w);
  return concat_channels({cbam(net.r_r, ar), cbam(net.r_d, ad)});
}

Var gam_enrich(const FeatureNet& net, const Var& Y) {
  const int c = Y->value.shape[0];
  if (c % 2 != 0) throw ShapeError("gam_enrich: channels must split in half");
  const int half = c / 2;
  const Var fr = slice_channels(Y, 0, half);
  const Var fd = slice_channels(Y, half, c);

  const Var local = net.f_l(fd);
  const Var dilated = net.f_g(fd);
  const Var pooled = net.f_l(
      broadcast_spatial(global_avg_pool(fd), fd->value.shape[1], fd->value.shape[2]));
  const Var contrast = concat_channels({sub(local, dilated), sub(local, pooled)});
  return concat_channels({net.f_r(fr), contrast});
}

std::array<Var, 4> build_feature_stack(const FeatureNet& net,
                                       const EncodedView& enc,
                                       const Var& enriched) {
  std::array<Var, 4> stack;
  stack[3] = lrelu(net.topdown[3](enriched));
  for (int s = 2; s >= 0; --s) {
    const Var up = upsample2x_bilinear(stack[static_cast<size_t>(s + 1)]);
    const Var cat = concat_channels({up, enc.rgb_skips[static_cast<size_t>(s)],
                                     enc.depth_skips[static_cast<size_t>(s)]});
    stack[static_cast<size_t>(s)] = lrelu(net.topdown[static_cast<size_t>(s)](cat));
  }
  return stack;
}

DepthDecode decode_depth(const FeatureNet& net, const std::array<Var, 4>& stack,
                         const Tensor& depth, const Tensor& mask) {
  if (!depth.same_shape(mask))
    throw ShapeError("decode_depth: depth and mask extents disagree");
  DepthDecode out;
  for (size_t s = 0; s < 4; ++s) {
    const int stride = 1 << s;
    out.d_in[s] = subsample(depth, stride);
    out.mask[s] = subsample(mask, stride);
    if (out.d_in[s].shape[1] != stack[s]->value.shape[1] ||
        out.d_in[s].shape[2] != stack[s]->value.shape[2])
      throw ShapeError("decode_depth: stack scale disagrees with input");
    // Zero out hole depths so the residual identity holds under the mask.
    Tensor masked = out.d_in[s];
    for (long i = 0; i < masked.numel(); ++i) masked[i] *= out.mask[s][i];
    const Var refined = add(constant(masked), net.depth_head[s](stack[s]));
    out.d_rf[s] = mul_plane_bcast(constant(out.mask[s]), refined);
  }
  return out;
}

Var aggregate_views(const TransformerParams& tr, const std::vector<Var>& view_tokens) {
  if (view_tokens.empty()) throw ValueError("aggregate_views: no views");
  return mean_of(transformer_encode_batched(tr, view_tokens));
}

}  // namespace pifield
