#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "pifield/io.hpp"
#include "pifield/mesh.hpp"
#include "pifield/raster.hpp"
#include "pifield/rng.hpp"

using namespace pifield;

namespace {
Camera identity_camera() {
  Camera c;
  c.fx = c.fy = 100.0;
  c.cx = c.cy = 50.0;
  c.width = c.height = 100;
  return c;
}
}  // namespace

TEST_CASE("projection: principal ray and similar triangles") {
  Camera c = identity_camera();
  auto p = c.project({0, 0, 1});
  REQUIRE(p.valid);
  CHECK(p.pix.x == doctest::Approx(50.0));
  CHECK(p.pix.y == doctest::Approx(50.0));
  CHECK(p.z == doctest::Approx(1.0));

  auto q = c.project({0.5, 0, 1});
  CHECK(q.pix.x == doctest::Approx(100.0));
  CHECK(q.pix.y == doctest::Approx(50.0));

  CHECK_FALSE(c.project({0, 0, -1}).valid);
}

TEST_CASE("project/back_project round-trip on random points") {
  Camera c = Camera::look_at(90, 95, 32, 30, 64, 64, {1.8, 0.3, 0.2}, {0, 0.2, 0}, {0, 1, 0});
  Rng rng(17);
  for (int i = 0; i < 1000; ++i) {
    const Vec3 X{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
    const auto p = c.project(X);
    REQUIRE(p.valid);
    const Vec3 back = c.back_project(p.pix, p.z);
    CHECK(norm(back - X) < 1e-6);
  }
}

TEST_CASE("camera validation rejects bad intrinsics and rotations") {
  Camera c = identity_camera();
  c.validate();
  Camera bad = c;
  bad.fx = -1;
  CHECK_THROWS_AS(bad.validate(), ValueError);
  bad = c;
  bad.cx = 200;
  CHECK_THROWS_AS(bad.validate(), ValueError);
  bad = c;
  bad.world_to_cam.at(0, 0) = 2.0;
  CHECK_THROWS_AS(bad.validate(), ValueError);
  CHECK_THROWS_AS(
      Camera::look_at(10, 10, 5, 5, 10, 10, {0, 0, 0}, {0, 1, 0}, {0, 1, 0}), ValueError);
}

TEST_CASE("bilinear sampling: constant, ramp, centers") {
  RasterF32 flat(4, 3, 7.5f);
  CHECK(bilinear_sample(flat, {1.3, 0.7}) == doctest::Approx(7.5));
  CHECK(bilinear_sample(flat, {-10, 10}) == doctest::Approx(7.5));

  RasterF32 ramp(2, 1);
  ramp.at(0, 0) = 0.0f;
  ramp.at(1, 0) = 1.0f;
  CHECK(bilinear_sample(ramp, {0.25, 0}) == doctest::Approx(0.25));

  RasterF32 r(3, 3);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x) r.at(x, y) = static_cast<float>(10 * y + x);
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      CHECK(bilinear_sample(r, {static_cast<double>(x), static_cast<double>(y)}) ==
            doctest::Approx(10 * y + x));
  // Monotone along a row between adjacent centers.
  double prev = -1;
  for (double u = 0.0; u <= 1.0; u += 0.1) {
    const double v = bilinear_sample(r, {u, 1.0});
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("depth sampling renormalizes around holes") {
  DepthMap d(2, 2);
  d.set(0, 0, 2.0f);
  d.set(1, 0, 4.0f);
  d.set(0, 1, 6.0f);
  // (1,1) stays a hole.
  bool ok = false;
  // At the exact center all four weights are 0.25; renormalizing over three
  // valid corners gives (2+4+6)/3.
  CHECK(d.sample({0.5, 0.5}, &ok) == doctest::Approx(4.0));
  CHECK(ok);

  DepthMap holes(2, 2);
  CHECK(holes.sample({0.5, 0.5}, &ok) == 0.0);
  CHECK_FALSE(ok);

  CHECK(d.nearest({0.9, 0.1}) == doctest::Approx(4.0f));
}

TEST_CASE("normals from a fronto-parallel plane point at the camera") {
  Camera c = identity_camera();
  DepthMap d(100, 100);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x) d.set(x, y, 2.0f);
  NormalMap nm = normals_from_depth(d, c);
  REQUIRE(nm.is_valid(50, 50));
  const Vec3 n = nm.at(50, 50);
  CHECK(n.x == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(n.y == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(n.z == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK_FALSE(nm.is_valid(0, 0));  // border stencil leaves the raster
}

TEST_CASE("normals from a tilted plane match the analytic value") {
  Camera c = identity_camera();
  // Plane x = (z - 2), i.e. tilted 45 degrees about the vertical axis:
  // z(x,y) with camera ray through pixel (u,v): points satisfy
  // X = (u-cx)/fx * z, and X = z - 2  =>  z = 2 / (1 - (u-cx)/fx).
  DepthMap d(100, 100);
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x) {
      const double a = (x - c.cx) / c.fx;
      if (a < 0.9) d.set(x, y, static_cast<float>(2.0 / (1.0 - a)));
    }
  NormalMap nm = normals_from_depth(d, c);
  const Vec3 want = normalized(Vec3{1, 0, -1});
  int checked = 0;
  for (int y = 20; y < 80; y += 7)
    for (int x = 20; x < 80; x += 7) {
      REQUIRE(nm.is_valid(x, y));
      const Vec3 n = nm.at(x, y);
      CHECK(std::abs(norm(n) - 1.0) < 1e-5);
      const double cosang = dot(n, want);
      CHECK(std::acos(std::min(1.0, cosang)) < 0.5 * 3.14159265 / 180.0);
      ++checked;
    }
  CHECK(checked > 50);
}

TEST_CASE("hole in the stencil invalidates the normal") {
  Camera c = identity_camera();
  DepthMap d(10, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 10; ++x) d.set(x, y, 2.0f);
  d.valid[5 * 10 + 5] = 0;  // hole at (5,5)
  NormalMap nm = normals_from_depth(d, c);
  CHECK_FALSE(nm.is_valid(4, 5));
  CHECK_FALSE(nm.is_valid(6, 5));
  CHECK_FALSE(nm.is_valid(5, 4));
  CHECK_FALSE(nm.is_valid(5, 6));
  CHECK(nm.is_valid(3, 3));
}

TEST_CASE("point_to_surface: vertex, face region, oracle, rigid invariance") {
  Mesh tri;
  tri.vertices = {{0, 0, 0}, {4, 0, 0}, {0, 4, 0}};
  tri.tris = {{0, 1, 2}};
  CHECK(point_to_surface({0, 0, 0}, tri) == doctest::Approx(0.0));
  CHECK(point_to_surface({1, 1, 0.7}, tri) == doctest::Approx(0.7));
  CHECK(point_to_surface({-3, 0, 0}, tri) == doctest::Approx(3.0));

  Mesh empty;
  CHECK_THROWS_AS(point_to_surface({0, 0, 0}, empty), ValueError);

  // Dense-sampling oracle on an icosphere.
  Mesh sphere = make_icosphere(0.5, 2);
  std::vector<Vec3> dense;
  for (const auto& t : sphere.tris) {
    const Vec3 &a = sphere.vertices[t[0]], &b = sphere.vertices[t[1]],
               &c = sphere.vertices[t[2]];
    const int K = 16;
    for (int i = 0; i <= K; ++i)
      for (int j = 0; j + i <= K; ++j) {
        const double u = static_cast<double>(i) / K, v = static_cast<double>(j) / K;
        dense.push_back(a + (b - a) * u + (c - a) * v);
      }
  }
  Rng rng(23);
  TriBvh bvh(sphere);
  for (int k = 0; k < 100; ++k) {
    const Vec3 p{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
    double brute = 1e9;
    for (const auto& q : dense) brute = std::min(brute, norm(p - q));
    const double exact = point_to_surface(p, sphere);
    CHECK(std::abs(exact - brute) < 1e-3);
    CHECK(bvh.distance(p) == doctest::Approx(exact).epsilon(1e-12));
  }

  // Rigid invariance: rotate the mesh and the query point together.
  const double ang = 0.83;
  Mat4 rot = Mat4::identity();
  rot.at(0, 0) = std::cos(ang);
  rot.at(0, 2) = std::sin(ang);
  rot.at(2, 0) = -std::sin(ang);
  rot.at(2, 2) = std::cos(ang);
  rot.at(1, 3) = 0.37;
  Mesh moved = sphere.transformed(rot);
  for (int k = 0; k < 20; ++k) {
    const Vec3 p{rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)};
    const double d0 = point_to_surface(p, sphere);
    const double d1 = point_to_surface(rot.transform_point(p), moved);
    CHECK(std::abs(d0 - d1) < 1e-9);
  }
}

TEST_CASE("icosphere radius, area, and validity") {
  Mesh s = make_icosphere(0.5, 3);
  s.validate();
  for (const auto& v : s.vertices) CHECK(norm(v) == doctest::Approx(0.5).epsilon(1e-9));
  // 20 * 4^3 faces after three subdivisions.
  CHECK(s.tris.size() == 1280);
  CHECK(s.area() == doctest::Approx(4 * 3.14159265 * 0.25).epsilon(0.01));

  Mesh bad;
  bad.vertices = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  bad.tris = {{0, 1, 2}};
  CHECK_THROWS_AS(bad.validate(), ValueError);
  bad.tris = {{0, 1, 9}};
  CHECK_THROWS_AS(bad.validate(), ValueError);
}

TEST_CASE("bvh raycast and containment on a closed sphere") {
  Mesh s = make_icosphere(0.5, 3);
  TriBvh bvh(s);
  auto hit = bvh.raycast({0, 0, -3}, {0, 0, 1});
  REQUIRE(hit.hit);
  CHECK(hit.t == doctest::Approx(2.5).epsilon(2e-3));
  CHECK_FALSE(bvh.raycast({0, 2, -3}, {0, 0, 1}).hit);

  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p{rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7)};
    // Icosphere at 3 subdivisions is within 2e-3 of the true sphere; skip
    // the ambiguous shell.
    if (std::abs(norm(p) - 0.5) < 5e-3) continue;
    CHECK(mesh_contains(bvh, p) == (norm(p) < 0.5));
  }
}

TEST_CASE("obj and ply round-trips") {
  Mesh s = make_icosphere(0.31, 1, {0.1, -0.2, 0.05});
  save_obj("t.obj", s);
  Mesh o = load_obj("t.obj");
  REQUIRE(o.vertices.size() == s.vertices.size());
  REQUIRE(o.tris == s.tris);
  REQUIRE(o.normals.size() == s.normals.size());
  for (size_t i = 0; i < s.vertices.size(); ++i)
    CHECK(norm(o.vertices[i] - s.vertices[i]) < 1e-6);
  std::remove("t.obj");

  save_ply("t.ply", s);
  Mesh p = load_ply("t.ply");
  REQUIRE(p.vertices.size() == s.vertices.size());
  REQUIRE(p.tris == s.tris);
  for (size_t i = 0; i < s.vertices.size(); ++i) {
    // PLY stores float32; values were float-representable already.
    CHECK(static_cast<float>(p.vertices[i].x) == static_cast<float>(s.vertices[i].x));
    CHECK(static_cast<float>(p.vertices[i].y) == static_cast<float>(s.vertices[i].y));
  }
  std::remove("t.ply");

  CHECK_THROWS_AS(load_obj("missing.obj"), IoError);
  CHECK_THROWS_AS(load_ply("missing.ply"), IoError);
}

TEST_CASE("depth png16 and raw float round-trips") {
  DepthMap d(7, 5);
  Rng rng(37);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x)
      if ((x + y) % 3 != 0) d.set(x, y, static_cast<float>(rng.uniform(0.5, 4.0)));

  save_depth_png16("t16.png", d);
  DepthMap r = load_depth_png16("t16.png");
  REQUIRE(r.width == 7);
  REQUIRE(r.height == 5);
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) {
      CHECK(r.is_valid(x, y) == d.is_valid(x, y));
      if (d.is_valid(x, y))
        CHECK(std::abs(r.at(x, y) - d.at(x, y)) <= 5.01e-4);  // mm quantization
    }
  std::remove("t16.png");

  save_depth_raw("traw.bin", d);
  DepthMap rr = load_depth_raw("traw.bin");
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 7; ++x) {
      CHECK(rr.is_valid(x, y) == d.is_valid(x, y));
      if (d.is_valid(x, y)) CHECK(rr.at(x, y) == d.at(x, y));  // bit-exact
    }
  std::remove("traw.bin");
  std::remove("traw.bin.json");
}

TEST_CASE("mask, rgb, raster, and camera file round-trips") {
  MaskMap m(4, 3);
  m.at(1, 1) = 1;
  m.at(3, 2) = 1;
  save_mask_png8("tm.png", m);
  MaskMap mr = load_mask_png8("tm.png");
  CHECK(mr.m == m.m);
  std::remove("tm.png");

  RgbImage img(4, 3);
  img.at(0, 1, 1) = 1.0f;
  img.at(1, 2, 0) = 0.5f;
  img.at(2, 3, 2) = 0.25f;
  save_rgb_png8("ti.png", img);
  RgbImage ir = load_rgb_png8("ti.png");
  CHECK(ir.at(0, 1, 1) == doctest::Approx(1.0).epsilon(0.01));
  CHECK(ir.at(1, 2, 0) == doctest::Approx(0.5).epsilon(0.01));
  std::remove("ti.png");

  RasterF32 rast(3, 2);
  for (size_t i = 0; i < rast.v.size(); ++i) rast.v[i] = static_cast<float>(i) * 0.125f;
  save_raster_raw("tr.bin", rast);
  RasterF32 rr = load_raster_raw("tr.bin");
  CHECK(rr.v == rast.v);
  std::remove("tr.bin");
  std::remove("tr.bin.json");

  Camera c = Camera::look_at(80, 85, 31.5, 32.5, 64, 64, {1, 0.5, -1.5}, {0, 0, 0}, {0, 1, 0});
  save_camera_json("tc.json", c);
  Camera cr = load_camera_json("tc.json");
  CHECK(cr.fx == c.fx);
  CHECK(cr.width == c.width);
  for (int i = 0; i < 16; ++i)
    CHECK(cr.world_to_cam.m[static_cast<size_t>(i)] ==
          doctest::Approx(c.world_to_cam.m[static_cast<size_t>(i)]).epsilon(1e-12));
  std::remove("tc.json");
}
