#pragma once

#include <functional>
#include <memory>

#include "pifield/tensor.hpp"

namespace pifield {

// Reverse-mode autodiff over an explicit tape of shared Node pointers.
// Forward ops record a closure that scatters the node's cotangent into its
// parents; backward() replays closures in descending creation order, which is
// a valid topological order because parents are always created before
// children.
struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation, same shape as value
  bool requires_grad = false;
  bool has_grad = false;
  bool ran_backward = false;
  long id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& grad_buf();  // zero-initialized on first use
};

using Var = std::shared_ptr<Node>;

// Thread-local switch; ops built while disabled record no parents and no
// closures, so the same forward code serves training and inference.
bool grad_enabled();
void set_grad_enabled(bool on);
struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev); }
};

// Leaves. constant() never requires grad; leaf() is a trainable parameter.
Var constant(Tensor v);
Var leaf(Tensor v, bool requires_grad = true);

// Seeds the root cotangent with ones and replays the tape. Rejects a second
// call on the same root; build a fresh forward graph instead.
void backward(const Var& root);

// ---- elementwise ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var add_scalar(const Var& a, float s);
Var mul_scalar(const Var& a, float s);
Var rsub_scalar(float s, const Var& a);  // s - a
Var mul_const(const Var& a, const Tensor& c);
Var square(const Var& a);
Var sqrt_v(const Var& a);
Var rsqrt(const Var& a, float eps);  // 1/sqrt(a + eps)
Var log_v(const Var& a);
Var exp_v(const Var& a);
Var clamp(const Var& a, float lo, float hi);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, float slope);

// ---- matrix ops on [N,M] ----
Var matmul(const Var& a, const Var& b);
Var transpose2d(const Var& a);
Var add_bias_rows(const Var& x, const Var& b);     // [N,C] + [C]
Var softmax_rows(const Var& x);                    // rows sum to 1
Var row_sum(const Var& x);                         // [N,M] -> [N,1]
Var row_dot(const Var& a, const Var& b);           // [N,M],[N,M] -> [N,1]
Var mul_col_bcast(const Var& col, const Var& x);   // [N,1] * [N,M]
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(const Var& x, int c0, int c1);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, float eps);

// ---- reductions ----
Var sum_all(const Var& x);   // -> [1]
Var mean_all(const Var& x);  // -> [1]

// ---- image ops on [C,H,W] ----
Var conv2d(const Var& x, const Var& k, const Var& bias, int stride, int dilation);
Var conv2d_nobias(const Var& x, const Var& k, int stride, int dilation);
Var global_avg_pool(const Var& x);                   // -> [C,1,1]
Var broadcast_spatial(const Var& x, int h, int w);   // [C,1,1] -> [C,H,W]
Var channel_mean(const Var& x);                      // -> [1,H,W]
Var channel_max(const Var& x);                       // -> [1,H,W]
Var mul_channel_bcast(const Var& gate, const Var& x);  // [C,1,1] * [C,H,W]
Var mul_plane_bcast(const Var& gate, const Var& x);    // [1,H,W] * [C,H,W]
Var upsample2x_bilinear(const Var& x);
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int c0, int c1);
// Shift by integer pixels with zero fill; used by the depth-to-normal stencil.
Var shift_image(const Var& x, int dx, int dy);

// Bilinear sampling of a [C,H,W] map at continuous pixel coordinates
// (points[n] = {u,v}, pixel centers at integer coordinates, clamped at the
// border). Gradient flows into the map, not the coordinates.
Var sample_bilinear(const Var& feat, const std::vector<Vec2>& points);

// As above but corners where mask==0 drop out and the remaining weights are
// renormalized; rows with no valid corner yield 0 and set holes[n]=true.
Var sample_bilinear_masked(const Var& feat, const Tensor& mask,
                           const std::vector<Vec2>& points, std::vector<char>* holes);

// Masked smooth-L1 with quadratic zone |d| < delta, normalized by the valid
// count. mask entries are 0/1; a zero count yields 0.
Var smooth_l1_masked(const Var& pred, const Tensor& target, const Tensor& mask, float delta);

Var reshape(const Var& x, std::vector<int> shape);

}  // namespace pifield
