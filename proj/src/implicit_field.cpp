#include "pifield/implicit_field.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_map>

#include <nlohmann/json.hpp>

namespace pifield {

namespace {
constexpr float kMlpSlope = 0.01f;
constexpr int kQueryChunk = 4096;
}  // namespace

bool point_valid_in_view(const Camera& cam, const Vec3& X) {
  const auto pr = cam.project(X);
  return pr.valid && pr.pix.x >= 0 && pr.pix.x <= cam.width - 1 && pr.pix.y >= 0 &&
         pr.pix.y <= cam.height - 1;
}

PsdfFeature psdf_feature(const Vec3& X, const Camera& cam, const DepthMap& depth_rf,
                         double delta_p) {
  if (!(delta_p > 0)) throw ValueError("psdf: delta_p must be positive");
  if (depth_rf.width != cam.width || depth_rf.height != cam.height)
    throw ShapeError("psdf: depth extents do not match the camera");
  PsdfFeature f;
  if (!point_valid_in_view(cam, X)) return f;
  const auto pr = cam.project(X);
  f.valid = true;
  f.z = pr.z;
  bool ok = false;
  const double d = depth_rf.sample(pr.pix, &ok);
  if (!ok) {
    f.hole = true;
    f.p = delta_p;  // holes read as empty space
  } else {
    f.p = std::clamp(f.z - d, -delta_p, delta_p);
  }
  return f;
}

// ---- occupancy MLP ----

void MlpConfig::validate() const {
  if (widths.empty()) throw ValueError("mlp: no hidden layers");
  for (int w : widths)
    if (w < 1) throw ValueError("mlp: non-positive width");
  for (int s : skips)
    if (s < 1 || s >= static_cast<int>(widths.size()))
      throw ValueError("mlp: skip index out of range");
}

MlpConfig body_mlp_config() { return {{1024, 512, 256, 128, 128, 128, 128}, {3}}; }
MlpConfig face_mlp_config() { return {{512, 256, 128, 32}, {2}}; }
MlpConfig toy_mlp_config() { return {{48, 32, 24, 24}, {2}}; }

ImplicitMlp make_implicit_mlp(ParamStore& ps, const std::string& prefix, int in_dim,
                              const MlpConfig& cfg, Rng& rng) {
  cfg.validate();
  if (in_dim < 1) throw ValueError("mlp: non-positive input dim");
  ImplicitMlp mlp;
  mlp.cfg = cfg;
  mlp.in_dim = in_dim;
  const std::set<int> skips(cfg.skips.begin(), cfg.skips.end());
  for (size_t i = 0; i < cfg.widths.size(); ++i) {
    int cin = i == 0 ? in_dim : cfg.widths[i - 1];
    if (skips.count(static_cast<int>(i))) cin += in_dim;
    mlp.layers.emplace_back(ps, prefix + ".h" + std::to_string(i), cin, cfg.widths[i],
                            rng);
  }
  mlp.layers.emplace_back(ps, prefix + ".out", cfg.widths.back(), 1, rng);
  return mlp;
}

Var implicit_mlp_forward(const ImplicitMlp& mlp, const Var& feats) {
  if (feats->value.rank() != 2 || feats->value.dim(1) != mlp.in_dim)
    throw ShapeError("mlp: input must be [N," + std::to_string(mlp.in_dim) + "]");
  const std::set<int> skips(mlp.cfg.skips.begin(), mlp.cfg.skips.end());
  Var h = feats;
  for (size_t i = 0; i < mlp.cfg.widths.size(); ++i) {
    Var in = h;
    if (i > 0 && skips.count(static_cast<int>(i))) in = concat_cols({h, feats});
    h = leaky_relu(mlp.layers[i](in), kMlpSlope);
  }
  return sigmoid(mlp.layers.back()(h));
}

// ---- generic fields ----

std::vector<double> ImplicitField::query_batch(const std::vector<Vec3>& pts) const {
  std::vector<double> out(pts.size());
  for (size_t i = 0; i < pts.size(); ++i) out[i] = query(pts[i]);
  return out;
}

namespace {

class AnalyticField final : public ImplicitField {
 public:
  AnalyticField(ScenePtr scene, double sharpness)
      : scene_(std::move(scene)), k_(sharpness) {
    if (!scene_) throw ValueError("analytic field: null scene");
    if (!(k_ > 0)) throw ValueError("analytic field: sharpness must be positive");
  }
  double query(const Vec3& X) const override {
    const double a = k_ * scene_->sdf(X);
    if (a > 500) return 0.0;
    if (a < -500) return 1.0;
    return 1.0 / (1.0 + std::exp(a));
  }
  std::vector<double> query_batch(const std::vector<Vec3>& pts) const override {
    std::vector<double> out(pts.size());
    parallel_for(static_cast<long>(pts.size()), [&](long b, long e) {
      for (long i = b; i < e; ++i) out[static_cast<size_t>(i)] = query(pts[static_cast<size_t>(i)]);
    });
    return out;
  }

 private:
  ScenePtr scene_;
  double k_;
};

class GridField final : public ImplicitField {
 public:
  GridField(const Box3& b, int nx, int ny, int nz, std::vector<float> v)
      : b_(b), nx_(nx), ny_(ny), nz_(nz), v_(std::move(v)) {
    if (nx_ < 2 || ny_ < 2 || nz_ < 2) throw ValueError("grid field: need >= 2 nodes per axis");
    if (v_.size() != static_cast<size_t>(nx_) * ny_ * nz_)
      throw ShapeError("grid field: value count does not match the lattice");
    const Vec3 e = b_.hi - b_.lo;
    if (!(e.x > 0 && e.y > 0 && e.z > 0)) throw ValueError("grid field: empty bounds");
    for (float x : v_)
      if (!(x >= 0.0f && x <= 1.0f)) throw ValueError("grid field: value outside [0,1]");
  }

  double query(const Vec3& X) const override {
    const double tx = axis_coord(X.x, b_.lo.x, b_.hi.x, nx_);
    const double ty = axis_coord(X.y, b_.lo.y, b_.hi.y, ny_);
    const double tz = axis_coord(X.z, b_.lo.z, b_.hi.z, nz_);
    const int x0 = std::min(static_cast<int>(tx), nx_ - 2);
    const int y0 = std::min(static_cast<int>(ty), ny_ - 2);
    const int z0 = std::min(static_cast<int>(tz), nz_ - 2);
    const double fx = tx - x0, fy = ty - y0, fz = tz - z0;
    auto at = [&](int i, int j, int k) {
      return static_cast<double>(v_[(static_cast<size_t>(k) * ny_ + j) * nx_ + i]);
    };
    const double c00 = at(x0, y0, z0) * (1 - fx) + at(x0 + 1, y0, z0) * fx;
    const double c10 = at(x0, y0 + 1, z0) * (1 - fx) + at(x0 + 1, y0 + 1, z0) * fx;
    const double c01 = at(x0, y0, z0 + 1) * (1 - fx) + at(x0 + 1, y0, z0 + 1) * fx;
    const double c11 = at(x0, y0 + 1, z0 + 1) * (1 - fx) + at(x0 + 1, y0 + 1, z0 + 1) * fx;
    return (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz;
  }

 private:
  // Node-lattice coordinate, clamped to the box; snapped so positions built
  // as min + i/(n-1)*extent read their node value bit-exactly.
  static double axis_coord(double x, double lo, double hi, int n) {
    double t = (x - lo) / (hi - lo) * (n - 1);
    t = std::clamp(t, 0.0, static_cast<double>(n - 1));
    const double r = std::round(t);
    if (std::abs(t - r) < 1e-9) t = r;
    return t;
  }

  Box3 b_;
  int nx_, ny_, nz_;
  std::vector<float> v_;
};

}  // namespace

FieldPtr make_analytic_field(ScenePtr scene, double sharpness) {
  return std::make_shared<AnalyticField>(std::move(scene), sharpness);
}

FieldPtr make_grid_field(const Box3& bounds, int nx, int ny, int nz,
                         std::vector<float> values) {
  return std::make_shared<GridField>(bounds, nx, ny, nz, std::move(values));
}

FieldPtr make_grid_field_from(const ImplicitField& src, const Box3& bounds, int nx,
                              int ny, int nz) {
  if (nx < 2 || ny < 2 || nz < 2) throw ValueError("grid field: need >= 2 nodes per axis");
  const Vec3 e = bounds.hi - bounds.lo;
  std::vector<float> values(static_cast<size_t>(nx) * ny * nz);
  std::vector<Vec3> slab(static_cast<size_t>(nx) * ny);
  for (int k = 0; k < nz; ++k) {
    const double z = bounds.lo.z + static_cast<double>(k) / (nz - 1) * e.z;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i)
        slab[static_cast<size_t>(j) * nx + i] = {
            bounds.lo.x + static_cast<double>(i) / (nx - 1) * e.x,
            bounds.lo.y + static_cast<double>(j) / (ny - 1) * e.y, z};
    const std::vector<double> q = src.query_batch(slab);
    for (size_t m = 0; m < slab.size(); ++m)
      values[static_cast<size_t>(k) * slab.size() + m] = static_cast<float>(q[m]);
  }
  return make_grid_field(bounds, nx, ny, nz, std::move(values));
}

FieldNormal field_normal(const ImplicitField& f, const Vec3& X, double h) {
  if (!(h > 0)) throw ValueError("field normal: step must be positive");
  const Vec3 g{(f.query({X.x + h, X.y, X.z}) - f.query({X.x - h, X.y, X.z})) / (2 * h),
               (f.query({X.x, X.y + h, X.z}) - f.query({X.x, X.y - h, X.z})) / (2 * h),
               (f.query({X.x, X.y, X.z + h}) - f.query({X.x, X.y, X.z - h})) / (2 * h)};
  const double len = norm(g);
  if (len <= 1e-8) return {};
  return {g / len, true};
}

// ---- body field ----

int BodyFieldGraph::token_dim() const {
  if (views.empty()) return 0;
  int c = 0;
  for (const auto& s : views.front().stack) c += s->value.dim(0);
  return c + 3;
}

void BodyFieldGraph::validate() const {
  if (views.empty()) throw ValueError("body field: no views");
  if (!(delta_p > 0)) throw ValueError("body field: delta_p must be positive");
  const auto& first = views.front();
  for (const auto& vw : views) {
    for (int s = 0; s < 4; ++s) {
      const auto& v = vw.stack[static_cast<size_t>(s)];
      if (!v) throw ValueError("body field: missing stack level");
      if (v->value.rank() != 3) throw ShapeError("body field: stack level must be [C,H,W]");
      if (v->value.dim(0) != first.stack[static_cast<size_t>(s)]->value.dim(0))
        throw ShapeError("body field: stack channels differ across views");
      if (v->value.dim(1) != vw.stack[0]->value.dim(1) >> s ||
          v->value.dim(2) != vw.stack[0]->value.dim(2) >> s)
        throw ShapeError("body field: stack extents off the stride-2 pyramid");
    }
    if (!vw.d_rf || vw.d_rf->value.rank() != 3 || vw.d_rf->value.dim(0) != 1 ||
        vw.d_rf->value.dim(1) != vw.stack[0]->value.dim(1) ||
        vw.d_rf->value.dim(2) != vw.stack[0]->value.dim(2))
      throw ShapeError("body field: d_rf must be [1,H,W] at stack resolution");
    if (!vw.d_rf->value.same_shape(vw.depth_valid))
      throw ShapeError("body field: depth_valid must match d_rf");
    if (vw.cam.width != vw.stack[0]->value.dim(2) ||
        vw.cam.height != vw.stack[0]->value.dim(1))
      throw ShapeError("body field: camera extents do not match the rasters");
  }
  if (agg.dim != token_dim()) throw ShapeError("body field: aggregator dim != token dim");
  if (mlp.in_dim != token_dim()) throw ShapeError("body field: mlp input dim != token dim");
}

Var query_body_batch(const BodyFieldGraph& g, const std::vector<Vec3>& pts,
                     const std::vector<int>& view_ids) {
  g.validate();
  if (pts.empty()) throw ValueError("query_body: no points");
  std::vector<int> ids = view_ids;
  if (ids.empty()) {
    ids.resize(g.views.size());
    for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  }
  for (int id : ids)
    if (id < 0 || id >= static_cast<int>(g.views.size()))
      throw ValueError("query_body: view index out of range");

  const int n = static_cast<int>(pts.size());
  const float dp = static_cast<float>(g.delta_p);
  std::vector<Var> tokens;
  tokens.reserve(ids.size());
  for (int id : ids) {
    const auto& vw = g.views[static_cast<size_t>(id)];
    std::vector<Vec2> px(static_cast<size_t>(n));
    Tensor zt({n, 1});
    for (int i = 0; i < n; ++i) {
      const auto pr = vw.cam.project(pts[static_cast<size_t>(i)]);
      if (!point_valid_in_view(vw.cam, pts[static_cast<size_t>(i)]))
        throw ValueError("query_body: point outside view " + std::to_string(id));
      px[static_cast<size_t>(i)] = pr.pix;
      zt[i] = static_cast<float>(pr.z);
    }
    std::vector<Var> parts;
    for (int s = 0; s < 4; ++s) {
      std::vector<Vec2> ps(static_cast<size_t>(n));
      const double inv = 1.0 / (1 << s);
      for (int i = 0; i < n; ++i)
        ps[static_cast<size_t>(i)] = {px[static_cast<size_t>(i)].x * inv,
                                      px[static_cast<size_t>(i)].y * inv};
      parts.push_back(sample_bilinear(vw.stack[static_cast<size_t>(s)], ps));
    }
    std::vector<char> holes;
    const Var dhat = sample_bilinear_masked(vw.d_rf, vw.depth_valid, px, &holes);
    Var p = clamp(sub(constant(zt), dhat), -dp, dp);
    Tensor okm({n, 1}), fill({n, 1}), hflag({n, 1});
    for (int i = 0; i < n; ++i) {
      const bool hole = holes[static_cast<size_t>(i)] != 0;
      okm[i] = hole ? 0.0f : 1.0f;
      fill[i] = hole ? dp : 0.0f;
      hflag[i] = hole ? 1.0f : 0.0f;
    }
    p = add(mul_const(p, okm), constant(fill));
    parts.push_back(constant(zt));
    parts.push_back(p);
    parts.push_back(constant(hflag));
    tokens.push_back(concat_cols(parts));
  }
  const Var pooled = mean_of(transformer_encode_batched(g.agg, tokens));
  return implicit_mlp_forward(g.mlp, pooled);
}

namespace {

class BodyField final : public ImplicitField {
 public:
  explicit BodyField(BodyFieldGraph g) : g_(std::move(g)) { g_.validate(); }

  double query(const Vec3& X) const override { return query_batch({X})[0]; }

  std::vector<double> query_batch(const std::vector<Vec3>& pts) const override {
    std::vector<double> out(pts.size(), 0.0);
    // Group points by the set of views that see them; a point seen nowhere
    // stays 0. Grouping cannot change values: every op is per-point.
    std::unordered_map<uint32_t, std::vector<int>> groups;
    for (size_t i = 0; i < pts.size(); ++i) {
      uint32_t m = 0;
      for (size_t v = 0; v < g_.views.size(); ++v)
        if (point_valid_in_view(g_.views[v].cam, pts[i])) m |= 1u << v;
      if (m) groups[m].push_back(static_cast<int>(i));
    }
    NoGradGuard ng;
    for (const auto& [m, idx] : groups) {
      std::vector<int> ids;
      for (size_t v = 0; v < g_.views.size(); ++v)
        if (m & (1u << v)) ids.push_back(static_cast<int>(v));
      for (size_t c0 = 0; c0 < idx.size(); c0 += kQueryChunk) {
        const size_t c1 = std::min(idx.size(), c0 + kQueryChunk);
        std::vector<Vec3> chunk(c1 - c0);
        for (size_t j = c0; j < c1; ++j) chunk[j - c0] = pts[static_cast<size_t>(idx[j])];
        const Var sig = query_body_batch(g_, chunk, ids);
        for (size_t j = c0; j < c1; ++j)
          out[static_cast<size_t>(idx[j])] = sig->value[static_cast<long>(j - c0)];
      }
    }
    return out;
  }

 private:
  BodyFieldGraph g_;
};

}  // namespace

FieldPtr make_body_field(BodyFieldGraph g) {
  return std::make_shared<BodyField>(std::move(g));
}

// ---- face field ----

FaceEncoder make_face_encoder(ParamStore& ps, const std::string& prefix, int width,
                              int out_channels, Rng& rng) {
  if (width < 1 || out_channels < 1) throw ValueError("face encoder: non-positive width");
  FaceEncoder enc;
  enc.c1 = Conv2dLayer(ps, prefix + ".c1", 5, width, 3, rng);
  enc.c2 = Conv2dLayer(ps, prefix + ".c2", width, width, 3, rng);
  enc.c3 = Conv2dLayer(ps, prefix + ".c3", width, out_channels, 3, rng);
  return enc;
}

Var face_encode(const FaceEncoder& enc, const Var& rgbdm) {
  if (rgbdm->value.rank() != 3 || rgbdm->value.dim(0) != 5)
    throw ShapeError("face encoder: input must be [5,H,W]");
  return enc.c3(leaky_relu(enc.c2(leaky_relu(enc.c1(rgbdm), kMlpSlope)), kMlpSlope));
}

FaceFieldGraph build_face_graph(const FaceEncoder& enc, const ImplicitMlp& mlp,
                                const Camera& cam, const FaceCrop& crop, int up_w,
                                int up_h, double delta_p, double alpha) {
  const int cw = crop.depth.width, ch = crop.depth.height;
  if (cw < 2 || ch < 2) throw ShapeError("face graph: crop too small");
  if (crop.rgb.width != cw || crop.rgb.height != ch || crop.mask.width != cw ||
      crop.mask.height != ch)
    throw ShapeError("face graph: crop rasters disagree");
  if (up_w < cw || up_h < ch) throw ValueError("face graph: upsampling cannot shrink");
  if (!(delta_p > 0) || !(alpha > 0))
    throw ValueError("face graph: delta_p and alpha must be positive");
  const int feat_c = enc.c3.K->value.dim(0);
  if (mlp.in_dim != feat_c + 3)
    throw ShapeError("face graph: mlp input dim != encoder channels + 3");

  const RgbImage rgb_up = resample_rgb(crop.rgb, up_w, up_h);
  const MaskMap mask_up = resample_mask(crop.mask, up_w, up_h);
  DepthMap depth_up = resample_depth(crop.depth, up_w, up_h);
  for (int y = 0; y < up_h; ++y)
    for (int x = 0; x < up_w; ++x)
      if (!mask_up.at(x, y)) depth_up.valid[static_cast<size_t>(y) * up_w + x] = 0;

  Tensor in({5, up_h, up_w});
  const size_t hw = static_cast<size_t>(up_h) * up_w;
  std::copy(rgb_up.planes.begin(), rgb_up.planes.end(), in.data.begin());
  for (size_t i = 0; i < hw; ++i) {
    in.data[3 * hw + i] = depth_up.valid[i] ? depth_up.depth[i] : 0.0f;
    in.data[4 * hw + i] = depth_up.valid[i] ? 1.0f : 0.0f;
  }

  FaceFieldGraph g;
  g.cam = cam;
  g.region = crop.region;
  g.up_to_full = {crop.to_full.sx * (cw - 1) / (up_w - 1),
                  crop.to_full.sy * (ch - 1) / (up_h - 1), crop.to_full.ox,
                  crop.to_full.oy};
  g.features = face_encode(enc, constant(std::move(in)));
  g.depth_up = std::move(depth_up);
  g.depth_crop = crop.depth;
  g.mlp = mlp;
  g.delta_p = delta_p;
  g.alpha = alpha;
  return g;
}

bool face_point_selected(const FaceFieldGraph& g, const Vec3& X) {
  return facial_flag(X, g.cam, g.depth_crop, g.region, g.alpha);
}

Var query_face_batch(const FaceFieldGraph& g, const std::vector<Vec3>& pts) {
  if (pts.empty()) throw ValueError("query_face: no points");
  const int n = static_cast<int>(pts.size());
  const float dp = static_cast<float>(g.delta_p);
  std::vector<Vec2> q(static_cast<size_t>(n));
  Tensor zt({n, 1}), pt({n, 1}), hflag({n, 1});
  for (int i = 0; i < n; ++i) {
    const Vec3& X = pts[static_cast<size_t>(i)];
    if (!face_point_selected(g, X))
      throw ValueError("query_face: point with a clear selection flag");
    const auto pr = g.cam.project(X);
    q[static_cast<size_t>(i)] = g.up_to_full.to_crop(pr.pix);
    zt[i] = static_cast<float>(pr.z);
    bool ok = false;
    const double d = g.depth_up.sample(q[static_cast<size_t>(i)], &ok);
    if (ok) {
      pt[i] = std::clamp(static_cast<float>(pr.z - d), -dp, dp);
      hflag[i] = 0.0f;
    } else {
      pt[i] = dp;
      hflag[i] = 1.0f;
    }
  }
  const Var feats = sample_bilinear(g.features, q);
  const Var tok =
      concat_cols({feats, constant(std::move(zt)), constant(std::move(pt)),
                   constant(std::move(hflag))});
  return implicit_mlp_forward(g.mlp, tok);
}

namespace {

class FaceField final : public ImplicitField {
 public:
  explicit FaceField(FaceFieldGraph g) : g_(std::move(g)) {}

  double query(const Vec3& X) const override {
    if (!face_point_selected(g_, X)) return 0.0;
    NoGradGuard ng;
    return query_face_batch(g_, {X})->value[0];
  }

  std::vector<double> query_batch(const std::vector<Vec3>& pts) const override {
    std::vector<double> out(pts.size(), 0.0);
    std::vector<int> idx;
    for (size_t i = 0; i < pts.size(); ++i)
      if (face_point_selected(g_, pts[i])) idx.push_back(static_cast<int>(i));
    NoGradGuard ng;
    for (size_t c0 = 0; c0 < idx.size(); c0 += kQueryChunk) {
      const size_t c1 = std::min(idx.size(), c0 + kQueryChunk);
      std::vector<Vec3> chunk(c1 - c0);
      for (size_t j = c0; j < c1; ++j) chunk[j - c0] = pts[static_cast<size_t>(idx[j])];
      const Var sig = query_face_batch(g_, chunk);
      for (size_t j = c0; j < c1; ++j)
        out[static_cast<size_t>(idx[j])] = sig->value[static_cast<long>(j - c0)];
    }
    return out;
  }

 private:
  FaceFieldGraph g_;
};

}  // namespace

FieldPtr make_face_field(FaceFieldGraph g) {
  return std::make_shared<FaceField>(std::move(g));
}

// ---- manifest ----

void AssemblyManifest::validate() const {
  if (checkpoint.empty()) throw ValueError("manifest: empty checkpoint path");
  encoder.validate();
  if (agg_heads < 1 || agg_layers < 1 || agg_ffn < 1)
    throw ValueError("manifest: aggregator config must be positive");
  body_mlp.validate();
  face_mlp.validate();
  if (face_enc_width < 1 || face_enc_channels < 1)
    throw ValueError("manifest: face encoder config must be positive");
  if (!(delta_p > 0) || !(alpha > 0))
    throw ValueError("manifest: delta_p and alpha must be positive");
  if (views.empty()) throw ValueError("manifest: no views");
  for (const auto& v : views)
    if (v.camera.empty() || v.rgb.empty() || v.depth.empty() || v.mask.empty())
      throw ValueError("manifest: view with an empty path");
  if (has_face()) {
    if (face_view < 0 || face_view >= static_cast<int>(views.size()))
      throw ValueError("manifest: face view out of range");
    if (face_upsample[0] < 0 || face_upsample[1] < 0)
      throw ValueError("manifest: negative face upsample extents");
  }
}

namespace {

nlohmann::json mlp_to_json(const MlpConfig& m) {
  return {{"widths", m.widths}, {"skips", m.skips}};
}

MlpConfig mlp_from_json(const nlohmann::json& j) {
  MlpConfig m;
  m.widths = j.at("widths").get<std::vector<int>>();
  m.skips = j.at("skips").get<std::vector<int>>();
  return m;
}

}  // namespace

void save_manifest(const std::string& path, const AssemblyManifest& m) {
  m.validate();
  nlohmann::json j;
  j["checkpoint"] = m.checkpoint;
  j["encoder"] = {{"channels", m.encoder.channels},
                  {"stack_channels", m.encoder.stack_channels},
                  {"cam_head", m.encoder.cam_head},
                  {"gam_local", m.encoder.gam_local},
                  {"gam_dilate", m.encoder.gam_dilate}};
  j["aggregator"] = {{"heads", m.agg_heads}, {"layers", m.agg_layers}, {"ffn", m.agg_ffn}};
  j["body_mlp"] = mlp_to_json(m.body_mlp);
  j["face_mlp"] = mlp_to_json(m.face_mlp);
  j["face_encoder"] = {{"width", m.face_enc_width}, {"channels", m.face_enc_channels}};
  j["delta_p"] = m.delta_p;
  j["alpha"] = m.alpha;
  j["views"] = nlohmann::json::array();
  for (const auto& v : m.views)
    j["views"].push_back(
        {{"camera", v.camera}, {"rgb", v.rgb}, {"depth", v.depth}, {"mask", v.mask}});
  if (m.has_face())
    j["face"] = {{"view", m.face_view},
                 {"region", m.face_region},
                 {"upsample", m.face_upsample}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

AssemblyManifest load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("manifest: bad JSON: ") + e.what());
  }
  AssemblyManifest m;
  try {
    m.checkpoint = j.at("checkpoint").get<std::string>();
    const auto& je = j.at("encoder");
    m.encoder.channels = je.at("channels").get<std::array<int, 4>>();
    m.encoder.stack_channels = je.at("stack_channels").get<std::array<int, 4>>();
    m.encoder.cam_head = je.at("cam_head").get<int>();
    m.encoder.gam_local = je.at("gam_local").get<int>();
    m.encoder.gam_dilate = je.at("gam_dilate").get<int>();
    const auto& ja = j.at("aggregator");
    m.agg_heads = ja.at("heads").get<int>();
    m.agg_layers = ja.at("layers").get<int>();
    m.agg_ffn = ja.at("ffn").get<int>();
    m.body_mlp = mlp_from_json(j.at("body_mlp"));
    m.face_mlp = mlp_from_json(j.at("face_mlp"));
    const auto& jf = j.at("face_encoder");
    m.face_enc_width = jf.at("width").get<int>();
    m.face_enc_channels = jf.at("channels").get<int>();
    m.delta_p = j.at("delta_p").get<double>();
    m.alpha = j.at("alpha").get<double>();
    for (const auto& jv : j.at("views"))
      m.views.push_back({jv.at("camera").get<std::string>(), jv.at("rgb").get<std::string>(),
                         jv.at("depth").get<std::string>(), jv.at("mask").get<std::string>()});
    if (j.count("face")) {
      m.face_view = j["face"].at("view").get<int>();
      m.face_region = j["face"].at("region").get<std::array<int, 4>>();
      m.face_upsample = j["face"].at("upsample").get<std::array<int, 2>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace pifield
