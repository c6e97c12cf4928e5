#pragma once

#include <functional>

#include "pifield/implicit_field.hpp"

namespace pifield {

// Knee of the smooth-L1 depth penalty, meters.
constexpr double kSmoothL1Delta = 0.01;

struct LossWeights {
  double mu0 = 1.0, mu1 = 1.0;       // occupancy BCE, body / face sets
  double lambda_reg = 100.0;         // total-loss weight of the normal regularizer
  double lambda_d = 10.0;            // total-loss weight of the depth term
  double rho_d = 10.0, rho_n = 1.0;  // depth vs normal inside the depth term
  std::array<double, 4> lambda_s{1.0, 0.75, 0.5, 0.25};  // per-scale depth weights
  double eps_reg = 0.004;  // normal-consistency perturbation radius, meters
  void validate() const;   // everything nonnegative
};

// BCE over one sampled set. pred holds occupancies in (0,1), one per label;
// values are clamped to [1e-7, 1-1e-7] before the logs. Sum reduction is the
// training objective; the mean flag gives batch-size-independent reporting.
Var bce_loss(const Var& pred, const std::vector<uint8_t>& labels, bool mean_reduce = false);

// mu0 * BCE(body) + mu1 * BCE(face). A null face prediction with empty face
// labels drops the face term (body-only training).
Var loss_sigma(const Var& sigma_b, const std::vector<uint8_t>& labels_b,
               const Var& sigma_f, const std::vector<uint8_t>& labels_f,
               double mu0 = 1.0, double mu1 = 1.0, bool mean_reduce = false);

// Differentiable batch occupancy query: one value per point, shape [N] or
// [N,1].
using FieldQueryFn = std::function<Var(const std::vector<Vec3>&)>;

struct RegLossResult {
  Var loss;          // [1]
  long used = 0;     // perturbation pairs with both normals defined
  long skipped = 0;  // pairs dropped for a vanishing gradient
};

// Normal-consistency regularizer: sum over the flagged points of
// ||n(X) - n(X + delta)||^2 with delta uniform per axis in [-eps, eps]
// (on_sphere: uniform direction of length eps). Normals are normalized
// central-difference gradients with step h; a pair where either gradient
// norm falls at or below 1e-8 is skipped, and a batch with nothing left
// returns zero with a warning. Deterministic in seed.
RegLossResult loss_reg(const FieldQueryFn& query, const std::vector<Vec3>& points,
                       uint64_t seed, double eps = 0.004, int samples_per_point = 1,
                       double h = kNormalStep, bool on_sphere = false);

// GT pyramid for the depth term: 2x2 block means over valid pixels, a hole
// where a block has none. Extents divisible by 8, matching the stack scales.
std::array<DepthMap, 4> depth_gt_pyramid(const DepthMap& gt);

// rho_d * sum_s lambda_s * SmoothL1(d_rf^s, gt^s) + rho_n * L2(n_rf, n_gt).
// Depth errors average over pixels valid on both sides per scale (an empty
// scale contributes 0 with a warning). The normal term compares scale-0
// camera-frame normals from the same central-difference stencil as
// normals_from_depth, over pixels where both stencils hold.
Var loss_depth(const std::array<Var, 4>& d_rf, const std::array<Tensor, 4>& pred_mask,
               const DepthMap& d_gt, const Camera& cam, const LossWeights& w = {});

// L = L_sigma + lambda_reg * L_reg + lambda_D * L_D. Components are scalars;
// null ones drop out, and reg_active=false gates the regularizer off (the
// first training phase). Non-finite components are rejected by name.
Var total_loss(const Var& l_sigma, const Var& l_reg, const Var& l_d,
               const LossWeights& w = {}, bool reg_active = true);

}  // namespace pifield
