#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "pifield/capture.hpp"
#include "pifield/rng.hpp"

using namespace pifield;

TEST_CASE("primitive sdf values are exact") {
  auto sph = sdf_sphere({1, 0, 0}, 0.5);
  CHECK(sph->sdf({1, 0, 0}) == doctest::Approx(-0.5));
  CHECK(sph->sdf({2, 0, 0}) == doctest::Approx(0.5));
  CHECK(sph->sdf({1, 0.5, 0}) == doctest::Approx(0.0));

  auto cap = sdf_capsule({0, 0, 0}, {0, 1, 0}, 0.25);
  CHECK(cap->sdf({0, 0.5, 0}) == doctest::Approx(-0.25));
  CHECK(cap->sdf({0, 2, 0}) == doctest::Approx(0.75));
  CHECK(cap->sdf({0.5, 0.3, 0}) == doctest::Approx(0.25));

  auto box = sdf_box({0, 0, 0}, {1, 2, 3});
  CHECK(box->sdf({0, 0, 0}) == doctest::Approx(-1.0));  // nearest face is x
  CHECK(box->sdf({3, 0, 0}) == doctest::Approx(2.0));
  CHECK(box->sdf({2, 3, 0}) == doctest::Approx(std::sqrt(2.0)));  // corner region

  CHECK_THROWS_AS(sdf_sphere({0, 0, 0}, -1), ValueError);
  CHECK_THROWS_AS(sdf_box({0, 0, 0}, {1, 0, 1}), ValueError);
}

TEST_CASE("union is the min, smooth union tightens into the crease") {
  auto a = sdf_sphere({-0.4, 0, 0}, 0.5);
  auto b = sdf_sphere({0.4, 0, 0}, 0.5);
  auto u = sdf_union(a, b);
  auto s = sdf_smooth_union(a, b, 0.1);
  Rng rng(5);
  for (int i = 0; i < 500; ++i) {
    const Vec3 p{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5),
                 rng.uniform(-1.5, 1.5)};
    const double dmin = std::min(a->sdf(p), b->sdf(p));
    CHECK(u->sdf(p) == dmin);
    CHECK(s->sdf(p) <= dmin + 1e-12);        // only adds material
    CHECK(s->sdf(p) >= dmin - 0.1 / 4 - 1e-12);  // bounded crease fill
    if (std::abs(a->sdf(p) - b->sdf(p)) > 0.1)
      CHECK(s->sdf(p) == doctest::Approx(dmin));  // far from the crease
  }
}

TEST_CASE("composite sdfs stay 1-Lipschitz") {
  auto scene = sdf_smooth_union(
      sdf_union(sdf_sphere({0, 0.5, 0}, 0.3), sdf_box({0, -0.5, 0}, {0.4, 0.2, 0.3})),
      sdf_capsule({0, -0.3, 0}, {0, 0.4, 0}, 0.18), 0.08);
  Rng rng(7);
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    const Vec3 q{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    CHECK(std::abs(scene->sdf(p) - scene->sdf(q)) <= norm(p - q) * (1 + 1e-9) + 1e-12);
  }
}

TEST_CASE("sdf normal of a sphere is radial") {
  auto sph = sdf_sphere({0.2, -0.1, 0.3}, 0.4);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    Vec3 d = normalized(
        {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)});
    const Vec3 p = Vec3{0.2, -0.1, 0.3} + d * 0.4;
    const Vec3 n = sdf_normal(*sph, p);
    CHECK(dot(n, d) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("scene json parses primitives and blends") {
  const char* text = R"({
    "primitives": [
      {"type": "sphere", "center": [0, 0, 0], "radius": 0.5},
      {"type": "capsule", "a": [0, -0.5, 0], "b": [0, 0.5, 0], "radius": 0.2},
      {"type": "box", "center": [1, 0, 0], "half_extents": [0.1, 0.1, 0.1]}
    ],
    "blend": 0.05})";
  auto scene = parse_scene_json(text);
  CHECK(scene->sdf({0, 0, 0}) < 0);
  CHECK(scene->sdf({3, 0, 0}) > 0);
  CHECK(scene->bounds().contains({1, 0, 0}));

  CHECK_THROWS_AS(parse_scene_json("{}"), ValueError);
  CHECK_THROWS_AS(parse_scene_json(R"({"primitives":[{"type":"wedge"}]})"),
                  ValueError);
  CHECK_THROWS_AS(parse_scene_json("not json"), ValueError);
}

TEST_CASE("rig geometry: gaps, radius, aim") {
  RigConfig cfg;
  cfg.image_size = 64;
  auto cams = make_rig(cfg);
  REQUIRE(cams.size() == 3);

  // Consecutive angular gaps around the circle are 135, 90, 135 degrees.
  std::vector<double> az;
  for (const auto& c : cams) {
    const Vec3 e = c.position();
    az.push_back(std::atan2(e.x, -e.z) * 180.0 / 3.14159265358979);
  }
  std::sort(az.begin(), az.end());
  const double g0 = az[1] - az[0];
  const double g1 = az[2] - az[1];
  const double g2 = 360.0 - g0 - g1;
  CHECK(g0 == doctest::Approx(135.0));
  CHECK(g1 == doctest::Approx(135.0));
  CHECK(g2 == doctest::Approx(90.0));

  for (const auto& c : cams) {
    CHECK(norm(c.position() - cfg.target) == doctest::Approx(cfg.radius_m));
    const auto p = c.project(cfg.target);
    REQUIRE(p.valid);
    CHECK(p.pix.x == doctest::Approx(c.cx).epsilon(1e-9));
    CHECK(p.pix.y == doctest::Approx(c.cy).epsilon(1e-9));
    CHECK(p.z == doctest::Approx(cfg.radius_m));
  }

  RigConfig bad = cfg;
  bad.radius_m = 0;
  CHECK_THROWS_AS(make_rig(bad), ValueError);
}

namespace {
Camera frontal_camera(int n, double dist, double fov_deg = 45.0) {
  const double f = 0.5 * n / std::tan(0.5 * fov_deg * 3.14159265358979 / 180.0);
  const double c = 0.5 * (n - 1);
  return Camera::look_at(f, f, c, c, n, n, {0, 0, -dist}, {0, 0, 0}, {0, 1, 0});
}
}  // namespace

TEST_CASE("mesh and sdf renders of a sphere agree") {
  const Camera cam = frontal_camera(96, 3.0, 60.0);
  Mesh m = make_icosphere(1.0, 4);
  TriBvh bvh(m);
  const auto rm = render_view(m, bvh, cam);
  auto sph = sdf_sphere({0, 0, 0}, 1.0);
  const auto rs = render_view(*sph, cam);

  // Center pixel: camera 3 m away on -z, unit sphere -> depth 2.
  const int c = 48;
  REQUIRE(rm.depth.is_valid(c, c));
  REQUIRE(rs.depth.is_valid(c, c));
  CHECK(rm.depth.at(c, c) == doctest::Approx(2.0).epsilon(1e-3));
  CHECK(rs.depth.at(c, c) == doctest::Approx(2.0).epsilon(1e-3));

  // Background stays holes with mask 0.
  CHECK_FALSE(rm.depth.is_valid(0, 0));
  CHECK(rm.mask.at(0, 0) == 0);
  CHECK(rs.rgb.at(0, 0, 0) == 0.0f);

  // Depth along a grazing ray is unboundedly sensitive to the facet sagitta,
  // so the dual-representation comparison stays 3 px inside both silhouettes.
  const auto solid = [&](const DepthMap& d, int x, int y) {
    for (int dy = -4; dy <= 4; ++dy)
      for (int dx = -4; dx <= 4; ++dx) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= 96 || ny >= 96 || !d.is_valid(nx, ny))
          return false;
      }
    return true;
  };
  int common = 0;
  for (int y = 0; y < 96; ++y)
    for (int x = 0; x < 96; ++x) {
      CHECK(rm.mask.at(x, y) == (rm.depth.is_valid(x, y) ? 1 : 0));
      if (solid(rm.depth, x, y) && solid(rs.depth, x, y)) {
        CHECK(std::abs(rm.depth.at(x, y) - rs.depth.at(x, y)) < 2e-3);
        ++common;
      }
    }
  CHECK(common > 1000);

  // Headlight shading: brightest at the center, darker toward the rim.
  CHECK(rs.rgb.at(0, c, c) > 0.9f);
  bool dimmer_rim = false;
  for (int x = 0; x < 96; ++x)
    if (rs.depth.is_valid(x, c) && rs.rgb.at(0, x, c) < 0.4f) dimmer_rim = true;
  CHECK(dimmer_rim);
}

TEST_CASE("noise: zero model is bit-exact, seeds reproduce") {
  DepthMap gt(50, 40);
  Rng rng(11);
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 50; ++x)
      if ((x * 7 + y) % 9 != 0) gt.set(x, y, static_cast<float>(rng.uniform(1.0, 3.0)));

  NoiseModel zero;
  zero.sigma_base = 0;
  zero.dropout_rate = 0;
  const DepthMap same = add_noise(gt, zero, 0);
  CHECK(std::memcmp(same.depth.data(), gt.depth.data(),
                    gt.depth.size() * sizeof(float)) == 0);
  CHECK(same.valid == gt.valid);

  NoiseModel m;
  m.sigma_base = 0.01;
  m.seed = 42;
  const DepthMap a = add_noise(gt, m, 1);
  const DepthMap b = add_noise(gt, m, 1);
  CHECK(std::memcmp(a.depth.data(), b.depth.data(),
                    a.depth.size() * sizeof(float)) == 0);
  CHECK(a.valid == b.valid);

  const DepthMap other_view = add_noise(gt, m, 2);
  NoiseModel m2 = m;
  m2.seed = 43;
  const DepthMap other_seed = add_noise(gt, m2, 1);
  CHECK(std::memcmp(a.depth.data(), other_view.depth.data(),
                    a.depth.size() * sizeof(float)) != 0);
  CHECK(std::memcmp(a.depth.data(), other_seed.depth.data(),
                    a.depth.size() * sizeof(float)) != 0);

  NoiseModel bad;
  bad.dropout_rate = 1.5;
  CHECK_THROWS_AS(add_noise(gt, bad, 0), ValueError);
}

TEST_CASE("noise magnitude matches the model on a constant plane") {
  DepthMap gt(400, 250);
  for (int y = 0; y < 250; ++y)
    for (int x = 0; x < 400; ++x) gt.set(x, y, 2.0f);

  NoiseModel m;
  m.sigma_base = 0.01;
  m.seed = 7;
  const DepthMap noisy = add_noise(gt, m, 0);
  double sum = 0, sum2 = 0;
  long n = 0;
  for (int y = 0; y < 250; ++y)
    for (int x = 0; x < 400; ++x) {
      REQUIRE(noisy.is_valid(x, y));  // flat plane has no jump band
      const double r = noisy.at(x, y) - 2.0;
      sum += r;
      sum2 += r * r;
      ++n;
    }
  const double mean = sum / static_cast<double>(n);
  const double std = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
  CHECK(n == 100000);
  CHECK(std >= 0.0097);
  CHECK(std <= 0.0103);
  CHECK(std::abs(mean) < 2e-4);

  // Quadratic growth: depth_coeff=4 at d=2 scales sigma by 5.
  NoiseModel q = m;
  q.depth_coeff = 4.0;
  const DepthMap noisy_q = add_noise(gt, q, 0);
  double s2 = 0;
  for (int y = 0; y < 250; ++y)
    for (int x = 0; x < 400; ++x) {
      const double r = noisy_q.at(x, y) - 2.0;
      s2 += r * r;
    }
  const double std_q = std::sqrt(s2 / static_cast<double>(n));
  CHECK(std_q >= 0.0485);
  CHECK(std_q <= 0.0515);
}

TEST_CASE("dropout empties the jump band and only the band") {
  // Vertical step of 0.12 m at column 30.
  DepthMap gt(60, 50);
  for (int y = 0; y < 50; ++y)
    for (int x = 0; x < 60; ++x) gt.set(x, y, x < 30 ? 2.0f : 2.12f);

  NoiseModel all;
  all.sigma_base = 0;
  all.dropout_rate = 1.0;
  all.seed = 3;
  const DepthMap d = add_noise(gt, all, 0);
  const MaskMap band = depth_jump_mask(gt, all.jump_threshold);
  for (int y = 0; y < 50; ++y)
    for (int x = 0; x < 60; ++x) {
      if (band.at(x, y))
        CHECK_FALSE(d.is_valid(x, y));
      else
        CHECK(d.at(x, y) == gt.at(x, y));
    }

  NoiseModel part = all;
  part.dropout_rate = 0.3;
  const DepthMap p = add_noise(gt, part, 0);
  long band_n = 0, dropped = 0;
  for (int y = 0; y < 50; ++y)
    for (int x = 0; x < 60; ++x)
      if (band.at(x, y)) {
        ++band_n;
        if (!p.is_valid(x, y)) ++dropped;
      }
  REQUIRE(band_n == 100);  // 2 px band over 50 rows
  const double frac = static_cast<double>(dropped) / static_cast<double>(band_n);
  CHECK(frac > 0.3 - 4 * std::sqrt(0.3 * 0.7 / 100.0));
  CHECK(frac < 0.3 + 4 * std::sqrt(0.3 * 0.7 / 100.0));
}

TEST_CASE("depth jump mask: plane, step, holes, offset invariance") {
  DepthMap flat(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) flat.set(x, y, 1.5f);
  const MaskMap none = depth_jump_mask(flat);
  for (uint8_t v : none.m) CHECK(v == 0);

  DepthMap step(40, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) step.set(x, y, x < 20 ? 2.0f : 2.10f);
  const MaskMap sm = depth_jump_mask(step);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x)
      CHECK(sm.at(x, y) == ((x == 19 || x == 20) ? 1 : 0));

  DepthMap shifted = step;
  for (auto& v : shifted.depth) v += 5.0f;
  CHECK(depth_jump_mask(shifted).m == sm.m);

  // A hole marks its whole 3x3 neighborhood.
  DepthMap holed = flat;
  holed.valid[10 * 20 + 10] = 0;
  const MaskMap hm = depth_jump_mask(holed);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x)
      CHECK(hm.at(x, y) == ((std::abs(x - 10) <= 1 && std::abs(y - 10) <= 1) ? 1 : 0));

  // Sub-threshold step stays clean.
  DepthMap small(40, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 40; ++x) small.set(x, y, x < 20 ? 2.0f : 2.05f);
  for (uint8_t v : depth_jump_mask(small).m) CHECK(v == 0);
}

TEST_CASE("face crop: identity, round trip, projection hull") {
  const Camera cam = frontal_camera(80, 2.5);
  auto head = sdf_sphere({0, 0.3, 0}, 0.22);
  auto body = sdf_capsule({0, -0.6, 0}, {0, 0.2, 0}, 0.3);
  auto scene = sdf_union(body, head);
  const auto r = render_view(*scene, cam);

  const PixelBox full{0, 0, 80, 80};
  const FaceCrop ident = face_crop(r.rgb, r.depth, r.mask, full);
  CHECK(ident.to_full.ox == 0);
  CHECK(ident.to_full.oy == 0);
  CHECK(ident.rgb.width == 80);
  CHECK(ident.depth.depth == r.depth.depth);

  const Box3 head_box{{-0.24, 0.06, -0.24}, {0.24, 0.54, 0.24}};
  const PixelBox rf = project_face_box(cam, head_box);
  CHECK_FALSE(rf.empty());

  // Every rendered pixel that hits the head surface lands inside the region.
  for (int y = 0; y < 80; ++y)
    for (int x = 0; x < 80; ++x) {
      if (!r.depth.is_valid(x, y)) continue;
      const Vec3 P = cam.back_project({static_cast<double>(x), static_cast<double>(y)},
                                      r.depth.at(x, y));
      if (norm(P - Vec3{0, 0.3, 0}) < 0.221)
        CHECK((x >= rf.x0 && x < rf.x1 && y >= rf.y0 && y < rf.y1));
    }

  const FaceCrop fc = face_crop(r.rgb, r.depth, r.mask, rf);
  CHECK(fc.rgb.width == rf.width());
  for (int i = 0; i < 50; ++i) {
    const Vec2 p{i * 0.37, i * 0.21};
    const Vec2 back = fc.to_full.to_crop(fc.to_full.to_full(p));
    CHECK(std::abs(back.x - p.x) < 1e-6);
    CHECK(std::abs(back.y - p.y) < 1e-6);
  }
  // Cropped pixels match the source rasters.
  for (int y = 0; y < fc.depth.height; ++y)
    for (int x = 0; x < fc.depth.width; ++x) {
      CHECK(fc.mask.at(x, y) == r.mask.at(x + rf.x0, y + rf.y0));
      if (fc.depth.is_valid(x, y))
        CHECK(fc.depth.at(x, y) == r.depth.at(x + rf.x0, y + rf.y0));
    }

  CHECK_THROWS_AS(face_crop(r.rgb, r.depth, r.mask, PixelBox{-5, -5, -1, -1}),
                  ValueError);
}

TEST_CASE("noiseless renders are view-consistent on a convex scene") {
  // At 90-degree spacing the mutual-visibility lune holds samples whose
  // incidence keeps the per-pixel depth slope under the 5 mm tolerance; at
  // wider spacings every mutually visible sample grazes at least one view.
  RigConfig cfg;
  cfg.image_size = 320;
  cfg.fov_deg = 30.0;
  cfg.azimuths_deg = {0.0, 90.0, -90.0};
  auto cams = make_rig(cfg);
  auto sph = sdf_sphere({0, 0, 0}, 0.3);
  std::vector<ViewRender> views;
  for (const auto& c : cams) views.push_back(render_view(*sph, c));

  const int n_px = cfg.image_size;
  int checked = 0;
  for (size_t i = 0; i < cams.size(); ++i) {
    for (size_t j = 0; j < cams.size(); ++j) {
      if (i == j) continue;
      for (int y = 0; y < n_px; y += 4) {
        for (int x = 0; x < n_px; x += 4) {
          if (!views[i].depth.is_valid(x, y)) continue;
          const Vec3 P = cams[i].back_project(
              {static_cast<double>(x), static_cast<double>(y)},
              views[i].depth.at(x, y));
          // Convex scene: visible iff front-facing. Keep clear of grazing
          // angles in both views, where traced depth itself destabilizes.
          const Vec3 n = normalized(P);
          const Vec3 to_i = cams[i].position() - P;
          if (dot(n, to_i) < 0.5 * norm(to_i)) continue;
          const Vec3 to_j = cams[j].position() - P;
          if (dot(n, to_j) < 0.5 * norm(to_j)) continue;
          const auto pj = cams[j].project(P);
          REQUIRE(pj.valid);
          bool near_ok = false;
          const int px = static_cast<int>(std::lround(pj.pix.x));
          const int py = static_cast<int>(std::lround(pj.pix.y));
          for (int dy = -2; dy <= 2 && !near_ok; ++dy)
            for (int dx = -2; dx <= 2 && !near_ok; ++dx) {
              const int qx = px + dx, qy = py + dy;
              if (qx < 0 || qy < 0 || qx >= n_px || qy >= n_px) continue;
              if (!views[j].depth.is_valid(qx, qy)) continue;
              if (std::abs(views[j].depth.at(qx, qy) - pj.z) < 5e-3) near_ok = true;
            }
          CHECK(near_ok);
          ++checked;
        }
      }
    }
  }
  CHECK(checked > 200);
}
