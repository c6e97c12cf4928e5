#include "pifield/losses.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "pifield/autodiff.hpp"
#include "pifield/rng.hpp"

namespace pifield {

namespace {

// Clamp bound keeping log() finite at saturated predictions.
constexpr float kBceEps = 1e-7f;
// Gradient-norm floor below which a normal is undefined; matches the
// analytic normal query.
constexpr double kGradFloor = 1e-8;
// rsqrt regularizer. Kept pairs have squared norms above kGradFloor^2 =
// 1e-16, so 1e-20 shifts them by at most 1e-4 relative; on masked-out rows
// it keeps the backward pass finite (0 upstream times a finite value).
constexpr float kRsqrtEps = 1e-20f;
// Counter-rng stream for the perturbation draws.
constexpr uint64_t kPerturbStream = 0x7265;

void require_scalar_component(const Var& v, const char* name) {
  if (!v) return;
  if (v->value.numel() != 1)
    throw ShapeError(std::string("total loss: ") + name + " must be a scalar");
  if (!std::isfinite(v->value.data[0]))
    throw ValueError(std::string("total loss: ") + name + " is not finite");
}

}  // namespace

void LossWeights::validate() const {
  const auto bad = [](double v) { return !(v >= 0.0) || !std::isfinite(v); };
  if (bad(mu0) || bad(mu1)) throw ValueError("loss weights: mu0 and mu1 must be nonnegative");
  if (bad(lambda_reg)) throw ValueError("loss weights: lambda_reg must be nonnegative");
  if (bad(lambda_d)) throw ValueError("loss weights: lambda_d must be nonnegative");
  if (bad(rho_d) || bad(rho_n))
    throw ValueError("loss weights: rho_d and rho_n must be nonnegative");
  for (const double l : lambda_s)
    if (bad(l)) throw ValueError("loss weights: scale weights must be nonnegative");
  if (bad(eps_reg)) throw ValueError("loss weights: eps_reg must be nonnegative");
}

Var bce_loss(const Var& pred, const std::vector<uint8_t>& labels, bool mean_reduce) {
  if (!pred) throw ValueError("bce: null prediction");
  if (labels.empty()) throw ValueError("bce: empty label set");
  if (pred->value.numel() != static_cast<long>(labels.size()))
    throw ShapeError("bce: " + std::to_string(pred->value.numel()) + " predictions vs " +
                     std::to_string(labels.size()) + " labels");
  Tensor y(pred->value.shape);
  Tensor ym(pred->value.shape);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw ValueError("bce: labels must be 0 or 1");
    y.data[i] = static_cast<float>(labels[i]);
    ym.data[i] = 1.0f - y.data[i];
  }
  const Var p = clamp(pred, kBceEps, 1.0f - kBceEps);
  const Var ll = add(mul_const(log_v(p), y), mul_const(log_v(rsub_scalar(1.0f, p)), ym));
  Var loss = neg(sum_all(ll));
  if (mean_reduce) loss = mul_scalar(loss, 1.0f / static_cast<float>(labels.size()));
  return loss;
}

Var loss_sigma(const Var& sigma_b, const std::vector<uint8_t>& labels_b,
               const Var& sigma_f, const std::vector<uint8_t>& labels_f,
               double mu0, double mu1, bool mean_reduce) {
  if (mu0 < 0.0 || mu1 < 0.0) throw ValueError("loss_sigma: negative weight");
  if (!sigma_f && !labels_f.empty())
    throw ValueError("loss_sigma: face labels without a face prediction");
  Var loss = mul_scalar(bce_loss(sigma_b, labels_b, mean_reduce), static_cast<float>(mu0));
  if (sigma_f)
    loss = add(loss,
               mul_scalar(bce_loss(sigma_f, labels_f, mean_reduce), static_cast<float>(mu1)));
  return loss;
}

RegLossResult loss_reg(const FieldQueryFn& query, const std::vector<Vec3>& points,
                       uint64_t seed, double eps, int samples_per_point, double h,
                       bool on_sphere) {
  if (!query) throw ValueError("loss_reg: null query");
  if (!(eps > 0.0)) throw ValueError("loss_reg: eps must be positive");
  if (!(h > 0.0)) throw ValueError("loss_reg: step must be positive");
  if (samples_per_point <= 0) throw ValueError("loss_reg: samples per point must be positive");
  RegLossResult out;
  out.loss = constant(Tensor::zeros({1}));
  if (points.empty()) return out;

  const long M = static_cast<long>(points.size()) * samples_per_point;
  const CounterRng rng(seed, kPerturbStream);
  const Vec3 offs[6] = {{h, 0, 0}, {-h, 0, 0}, {0, h, 0}, {0, -h, 0}, {0, 0, h}, {0, 0, -h}};
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(M) * 12);
  for (long m = 0; m < M; ++m) {
    const Vec3& X = points[static_cast<size_t>(m / samples_per_point)];
    Vec3 delta;
    if (on_sphere) {
      const Vec3 g = {rng.normal_at(3 * static_cast<uint64_t>(m)),
                      rng.normal_at(3 * static_cast<uint64_t>(m) + 1),
                      rng.normal_at(3 * static_cast<uint64_t>(m) + 2)};
      const double len = norm(g);
      delta = len < 1e-12 ? Vec3{eps, 0, 0} : g * (eps / len);
    } else {
      delta = {rng.uniform_at(3 * static_cast<uint64_t>(m), -eps, eps),
               rng.uniform_at(3 * static_cast<uint64_t>(m) + 1, -eps, eps),
               rng.uniform_at(3 * static_cast<uint64_t>(m) + 2, -eps, eps)};
    }
    const Vec3 Y = X + delta;
    for (const Vec3& o : offs) pts.push_back(X + o);
    for (const Vec3& o : offs) pts.push_back(Y + o);
  }

  const Var q = query(pts);
  if (!q) throw ValueError("loss_reg: query returned null");
  if (q->value.numel() != 12 * M)
    throw ValueError("loss_reg: query returned " + std::to_string(q->value.numel()) +
                     " values, expected " + std::to_string(12 * M));

  // Pairs where either central-difference gradient vanishes carry no
  // normal; they are masked out of the sum (and out of the backward pass).
  Tensor mask({static_cast<int>(M), 1});
  const float* qv = q->value.data.data();
  for (long m = 0; m < M; ++m) {
    double n2[2] = {0.0, 0.0};
    for (int s = 0; s < 2; ++s)
      for (int a = 0; a < 3; ++a) {
        const double d =
            (static_cast<double>(qv[12 * m + 6 * s + 2 * a]) - qv[12 * m + 6 * s + 2 * a + 1]) /
            (2.0 * h);
        n2[s] += d * d;
      }
    const bool keep = n2[0] > kGradFloor * kGradFloor && n2[1] > kGradFloor * kGradFloor;
    mask.data[static_cast<size_t>(m)] = keep ? 1.0f : 0.0f;
    out.used += keep;
  }
  out.skipped = M - out.used;
  if (out.used == 0) {
    std::fprintf(stderr, "loss_reg: all %ld perturbation pairs had degenerate gradients\n", M);
    return out;
  }

  const Var r = reshape(q, {static_cast<int>(M), 12});
  const auto normal_of = [&](int base) {
    const Var gx = sub(slice_cols(r, base, base + 1), slice_cols(r, base + 1, base + 2));
    const Var gy = sub(slice_cols(r, base + 2, base + 3), slice_cols(r, base + 3, base + 4));
    const Var gz = sub(slice_cols(r, base + 4, base + 5), slice_cols(r, base + 5, base + 6));
    const Var g = mul_scalar(concat_cols({gx, gy, gz}), static_cast<float>(1.0 / (2.0 * h)));
    return mul_col_bcast(rsqrt(row_dot(g, g), kRsqrtEps), g);
  };
  const Var diff = sub(normal_of(0), normal_of(6));
  out.loss = sum_all(mul_const(row_dot(diff, diff), mask));
  return out;
}

std::array<DepthMap, 4> depth_gt_pyramid(const DepthMap& gt) {
  if (gt.width <= 0 || gt.height <= 0) throw ShapeError("depth pyramid: empty depth map");
  if (gt.width % 8 != 0 || gt.height % 8 != 0)
    throw ShapeError("depth pyramid: extents must be divisible by 8, got " +
                     std::to_string(gt.width) + "x" + std::to_string(gt.height));
  std::array<DepthMap, 4> pyr;
  pyr[0] = gt;
  for (int s = 1; s < 4; ++s) {
    const DepthMap& prev = pyr[s - 1];
    DepthMap cur(prev.width / 2, prev.height / 2);
    for (int y = 0; y < cur.height; ++y)
      for (int x = 0; x < cur.width; ++x) {
        double sum = 0.0;
        int cnt = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            if (prev.is_valid(2 * x + dx, 2 * y + dy)) {
              sum += prev.at(2 * x + dx, 2 * y + dy);
              ++cnt;
            }
        if (cnt > 0) cur.set(x, y, static_cast<float>(sum / cnt));
      }
    pyr[s] = std::move(cur);
  }
  return pyr;
}

Var loss_depth(const std::array<Var, 4>& d_rf, const std::array<Tensor, 4>& pred_mask,
               const DepthMap& d_gt, const Camera& cam, const LossWeights& w) {
  w.validate();
  if (cam.width != d_gt.width || cam.height != d_gt.height)
    throw ShapeError("loss_depth: camera raster does not match the depth map");
  const std::array<DepthMap, 4> pyr = depth_gt_pyramid(d_gt);
  for (int s = 0; s < 4; ++s) {
    if (!d_rf[s]) throw ValueError("loss_depth: null prediction at scale " + std::to_string(s));
    const long want = static_cast<long>(pyr[s].width) * pyr[s].height;
    if (d_rf[s]->value.numel() != want || pred_mask[s].numel() != want)
      throw ShapeError("loss_depth: scale " + std::to_string(s) + " expects " +
                       std::to_string(pyr[s].width) + "x" + std::to_string(pyr[s].height));
  }

  Var depth_sum;
  for (int s = 0; s < 4; ++s) {
    Tensor target(d_rf[s]->value.shape);
    Tensor both(d_rf[s]->value.shape);
    long cnt = 0;
    for (long i = 0; i < target.numel(); ++i) {
      const bool ok = pred_mask[s].data[static_cast<size_t>(i)] > 0.5f &&
                      pyr[s].valid[static_cast<size_t>(i)] != 0;
      both.data[static_cast<size_t>(i)] = ok ? 1.0f : 0.0f;
      target.data[static_cast<size_t>(i)] = ok ? pyr[s].depth[static_cast<size_t>(i)] : 0.0f;
      cnt += ok;
    }
    if (cnt == 0)
      std::fprintf(stderr, "loss_depth: scale %d has no co-valid pixels\n", s);
    const Var term =
        mul_scalar(smooth_l1_masked(d_rf[s], target, both, static_cast<float>(kSmoothL1Delta)),
                   static_cast<float>(w.lambda_s[static_cast<size_t>(s)]));
    depth_sum = depth_sum ? add(depth_sum, term) : term;
  }
  Var loss = mul_scalar(depth_sum, static_cast<float>(w.rho_d));

  // Normal term, full resolution only. The graph mirrors the raster normal
  // op: central-difference tangents of the back-projected depth, normals
  // from their cross product, compared where both stencils hold.
  const int W = d_gt.width, H = d_gt.height;
  const NormalMap gt_n = normals_from_depth(d_gt, cam);
  Tensor ucoef({1, H, W}), vcoef({1, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      ucoef.data[static_cast<size_t>(y) * W + x] = static_cast<float>((x - cam.cx) / cam.fx);
      vcoef.data[static_cast<size_t>(y) * W + x] = static_cast<float>((y - cam.cy) / cam.fy);
    }
  const Var D = reshape(d_rf[0], {1, H, W});
  const Var P = concat_channels({mul_const(D, ucoef), mul_const(D, vcoef), D});
  const Var tx = sub(shift_image(P, -1, 0), shift_image(P, 1, 0));
  const Var ty = sub(shift_image(P, 0, -1), shift_image(P, 0, 1));
  const auto ch = [](const Var& v, int c) { return slice_channels(v, c, c + 1); };
  const Var crx = sub(mul(ch(ty, 1), ch(tx, 2)), mul(ch(ty, 2), ch(tx, 1)));
  const Var cry = sub(mul(ch(ty, 2), ch(tx, 0)), mul(ch(ty, 0), ch(tx, 2)));
  const Var crz = sub(mul(ch(ty, 0), ch(tx, 1)), mul(ch(ty, 1), ch(tx, 0)));
  const Var inv = rsqrt(add(add(square(crx), square(cry)), square(crz)), kRsqrtEps);

  // Pixel enters iff interior, its four pred-mask neighbors hold, the pred
  // cross product is nondegenerate, and the gt normal exists there.
  const float* d0 = d_rf[0]->value.data.data();
  const float* m0 = pred_mask[0].data.data();
  const auto pix = [&](int x, int y) { return static_cast<size_t>(y) * W + x; };
  Tensor nmask({1, H, W});
  Tensor gx({1, H, W}), gy({1, H, W}), gz({1, H, W});
  long ncnt = 0;
  for (int y = 1; y + 1 < H; ++y)
    for (int x = 1; x + 1 < W; ++x) {
      if (m0[pix(x - 1, y)] <= 0.5f || m0[pix(x + 1, y)] <= 0.5f || m0[pix(x, y - 1)] <= 0.5f ||
          m0[pix(x, y + 1)] <= 0.5f || !gt_n.is_valid(x, y))
        continue;
      const Vec3 px0 = cam.cam_point({static_cast<double>(x - 1), static_cast<double>(y)},
                                     d0[pix(x - 1, y)]);
      const Vec3 px1 = cam.cam_point({static_cast<double>(x + 1), static_cast<double>(y)},
                                     d0[pix(x + 1, y)]);
      const Vec3 py0 = cam.cam_point({static_cast<double>(x), static_cast<double>(y - 1)},
                                     d0[pix(x, y - 1)]);
      const Vec3 py1 = cam.cam_point({static_cast<double>(x), static_cast<double>(y + 1)},
                                     d0[pix(x, y + 1)]);
      if (norm(cross(py1 - py0, px1 - px0)) < 1e-12) continue;
      nmask.data[pix(x, y)] = 1.0f;
      const Vec3 g = gt_n.at(x, y);
      gx.data[pix(x, y)] = static_cast<float>(g.x);
      gy.data[pix(x, y)] = static_cast<float>(g.y);
      gz.data[pix(x, y)] = static_cast<float>(g.z);
      ++ncnt;
    }
  if (ncnt == 0) {
    std::fprintf(stderr, "loss_depth: no pixels with both normals defined\n");
    return loss;
  }
  const Var dx = sub(mul(crx, inv), constant(gx));
  const Var dy = sub(mul(cry, inv), constant(gy));
  const Var dz = sub(mul(crz, inv), constant(gz));
  const Var sq = add(add(square(dx), square(dy)), square(dz));
  const Var nterm = mul_scalar(sum_all(mul_const(sq, nmask)),
                               static_cast<float>(w.rho_n / static_cast<double>(ncnt)));
  return add(loss, nterm);
}

Var total_loss(const Var& l_sigma, const Var& l_reg, const Var& l_d, const LossWeights& w,
               bool reg_active) {
  w.validate();
  require_scalar_component(l_sigma, "l_sigma");
  require_scalar_component(l_reg, "l_reg");
  require_scalar_component(l_d, "l_d");
  Var acc = l_sigma;
  if (reg_active && l_reg) {
    const Var t = mul_scalar(l_reg, static_cast<float>(w.lambda_reg));
    acc = acc ? add(acc, t) : t;
  }
  if (l_d) {
    const Var t = mul_scalar(l_d, static_cast<float>(w.lambda_d));
    acc = acc ? add(acc, t) : t;
  }
  if (!acc) throw ValueError("total loss: no components");
  return acc;
}

}  // namespace pifield
