#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <fstream>

#include "pifield/capture.hpp"
#include "pifield/rng.hpp"
#include "pifield/sampling.hpp"

using namespace pifield;

TEST_CASE("occupancy: cube mesh center in, far point out") {
  const Mesh cube = make_box_mesh({0, 0, 0}, {0.5, 0.5, 0.5});
  OccupancyOracle oracle(cube);
  CHECK(oracle.occupied({0, 0, 0}));
  CHECK_FALSE(oracle.occupied({2, 0, 0}));
  CHECK(oracle.occupied({0.49, 0.49, 0.49}));
  CHECK_FALSE(oracle.occupied({0.51, 0, 0}));

  OccupancyOracle sdf(sdf_sphere({0, 0, 0}, 0.4));
  CHECK(sdf.occupied({0.39, 0, 0}));
  CHECK(sdf.occupied({0.4, 0, 0}));  // boundary counts as occupied
  CHECK_FALSE(sdf.occupied({0.41, 0, 0}));
}

TEST_CASE("non-watertight meshes are rejected with an edge diagnostic") {
  Mesh open_box = make_box_mesh({0, 0, 0}, {1, 1, 1});
  open_box.tris.pop_back();  // remove one triangle
  try {
    OccupancyOracle oracle(open_box);
    FAIL("expected rejection");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("edge") != std::string::npos);
  }
}

TEST_CASE("mesh parity agrees with the analytic sphere") {
  const Mesh sphere = make_icosphere(0.4, 4);
  OccupancyOracle oracle(sphere);
  Rng rng(3);
  long n = 0, agree = 0;
  for (int i = 0; i < 10000; ++i) {
    const Vec3 p{rng.uniform(-0.6, 0.6), rng.uniform(-0.6, 0.6),
                 rng.uniform(-0.6, 0.6)};
    const bool mesh_in = oracle.occupied(p);
    const bool true_in = norm(p) <= 0.4;
    ++n;
    if (mesh_in == true_in)
      ++agree;
    else
      CHECK(std::abs(norm(p) - 0.4) < 1e-3);  // only near the shell
  }
  CHECK(static_cast<double>(agree) / static_cast<double>(n) >= 0.999);
}

TEST_CASE("uniform sampling reproduces the box volume fraction") {
  auto box = sdf_box({0, 0, 0}, {0.2, 0.3, 0.1});
  OccupancyOracle oracle(box);
  const long n = 20000;
  const SampleBatch b =
      sample_training_points(oracle, Mesh{}, n, 0.0, 1.0, 99, SampleTag::kBody);
  b.validate();
  REQUIRE(b.size() == n);
  double occ = 0;
  for (uint8_t l : b.labels) occ += l;
  const double frac = occ / static_cast<double>(n);
  // Bounds extent grows 10%: ratio = 1 / 1.1^3.
  const double expect = 1.0 / (1.1 * 1.1 * 1.1);
  const double sigma = std::sqrt(expect * (1 - expect) / static_cast<double>(n));
  CHECK(frac > expect - 3 * sigma);
  CHECK(frac < expect + 3 * sigma);
}

TEST_CASE("near-surface sampling splits labels about evenly") {
  const Mesh sphere = make_icosphere(0.35, 3);
  OccupancyOracle oracle(sphere);
  const SampleBatch b = sample_training_points(oracle, sphere, 8000, 1e-6, 0.0,
                                               7, SampleTag::kBody);
  double occ = 0;
  for (uint8_t l : b.labels) occ += l;
  const double frac = occ / 8000.0;
  CHECK(frac > 0.45);
  CHECK(frac < 0.55);
  // Points hug the surface.
  TriBvh bvh(sphere);
  for (int i = 0; i < 200; ++i)
    CHECK(bvh.distance(b.points[static_cast<size_t>(i * 37)]) < 1e-4);
}

TEST_CASE("sampling is reproducible and seed-sensitive") {
  const Mesh sphere = make_icosphere(0.3, 2);
  OccupancyOracle oracle(sphere);
  const auto a = sample_training_points(oracle, sphere, 500, 0.05, 0.1, 11);
  const auto b = sample_training_points(oracle, sphere, 500, 0.05, 0.1, 11);
  const auto c = sample_training_points(oracle, sphere, 500, 0.05, 0.1, 12);
  REQUIRE(a.size() == b.size());
  CHECK(std::memcmp(a.points.data(), b.points.data(),
                    a.points.size() * sizeof(Vec3)) == 0);
  CHECK(a.labels == b.labels);
  CHECK(std::memcmp(a.points.data(), c.points.data(),
                    a.points.size() * sizeof(Vec3)) != 0);

  CHECK_THROWS_AS(sample_training_points(oracle, sphere, 0, 0.05, 0.1, 1),
                  ValueError);
  CHECK_THROWS_AS(sample_training_points(oracle, sphere, 10, 0.05, 2.0, 1),
                  ValueError);
  CHECK_THROWS_AS(sample_training_points(oracle, Mesh{}, 10, 0.05, 0.5, 1),
                  ValueError);
}

TEST_CASE("default point budgets") {
  CHECK(kDefaultBodyPoints == 8000);
  CHECK(kDefaultJointPoints == 5000);
}

namespace {
Camera face_test_camera() {
  return Camera::look_at(100, 100, 50, 50, 100, 100, {0, 0, -2}, {0, 0, 0},
                         {0, 1, 0});
}
}  // namespace

TEST_CASE("facial flag: region, depth window, holes, monotone alpha") {
  const Camera cam = face_test_camera();
  // Face region and an aligned constant face depth at 1.6 m.
  const PixelBox rf{40, 40, 60, 60};
  DepthMap face(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 20; ++x) face.set(x, y, 1.6f);

  // World point projecting to the region center at depth 1.6.
  const Vec3 on_surface = cam.back_project({50, 50}, 1.6);
  CHECK(facial_flag(on_surface, cam, face, rf, 0.15));

  // Outside the region.
  const Vec3 outside = cam.back_project({20, 50}, 1.6);
  CHECK_FALSE(facial_flag(outside, cam, face, rf, 0.15));

  // 0.2 m in front of the face surface.
  const Vec3 in_front = cam.back_project({50, 50}, 1.4);
  CHECK_FALSE(facial_flag(in_front, cam, face, rf, 0.15));
  CHECK(facial_flag(in_front, cam, face, rf, 0.25));

  // Hole under the projection.
  DepthMap holed = face;
  for (int y = 9; y <= 11; ++y)
    for (int x = 9; x <= 11; ++x) holed.valid[static_cast<size_t>(y) * 20 + x] = 0;
  CHECK_FALSE(facial_flag(on_surface, cam, holed, rf, 0.15));

  // Monotone in alpha over a grid of probes.
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p = cam.back_project({rng.uniform(35, 65), rng.uniform(35, 65)},
                                    rng.uniform(1.3, 1.9));
    const bool small = facial_flag(p, cam, face, rf, 0.05);
    const bool large = facial_flag(p, cam, face, rf, 0.2);
    if (small) CHECK(large);
  }

  CHECK_THROWS_AS(facial_flag(on_surface, cam, face, PixelBox{0, 0, 10, 10}, 0.15),
                  ShapeError);
  CHECK_THROWS_AS(facial_flag(on_surface, cam, face, rf, 0.0), ValueError);
}

TEST_CASE("mark_sj counts views whose nearest jump pixel is flagged") {
  const Camera cam0 = face_test_camera();
  const Camera cam1 = Camera::look_at(100, 100, 50, 50, 100, 100, {2, 0, 0},
                                      {0, 0, 0}, {0, 1, 0});
  std::vector<Camera> cams{cam0, cam1};

  SampleBatch batch;
  batch.points = {cam0.back_project({30, 40}, 2.0), {0, 0, 0}};
  batch.labels = {1, 1};
  batch.v_f = {0, 0};
  batch.s_j = {0, 0};

  MaskMap m0(100, 100), m1(100, 100);
  m0.at(30, 40) = 1;  // point 0 projects exactly here in view 0
  std::vector<MaskMap> masks{m0, m1};

  mark_sj(batch, masks, cams, 0);
  CHECK(batch.s_j[0] == 1);
  CHECK(batch.s_j[1] == 0);

  mark_sj(batch, masks, cams, 1);  // needs >1 views
  CHECK(batch.s_j[0] == 0);

  // Flag the same point in the second view as well.
  const auto pr1 = cam1.project(batch.points[0]);
  REQUIRE(pr1.valid);
  m1.at(static_cast<int>(std::lround(pr1.pix.x)),
        static_cast<int>(std::lround(pr1.pix.y))) = 1;
  masks[1] = m1;
  mark_sj(batch, masks, cams, 1);
  CHECK(batch.s_j[0] == 1);

  // Brute-force cross-check on random points.
  const Mesh sphere = make_icosphere(0.3, 2);
  OccupancyOracle oracle(sphere);
  SampleBatch rnd = sample_training_points(oracle, sphere, 400, 0.08, 0.3, 21);
  MaskMap r0(100, 100), r1(100, 100);
  Rng rng(17);
  for (int i = 0; i < 300; ++i) {
    r0.at(rng.next_below(100), rng.next_below(100)) = 1;
    r1.at(rng.next_below(100), rng.next_below(100)) = 1;
  }
  std::vector<MaskMap> rmasks{r0, r1};
  mark_sj(rnd, rmasks, cams, 0);
  for (long i = 0; i < rnd.size(); ++i) {
    int hits = 0;
    for (size_t v = 0; v < cams.size(); ++v) {
      const auto pr = cams[v].project(rnd.points[static_cast<size_t>(i)]);
      if (!pr.valid) continue;
      const int x = static_cast<int>(std::lround(pr.pix.x));
      const int y = static_cast<int>(std::lround(pr.pix.y));
      if (x >= 0 && y >= 0 && x < 100 && y < 100 && rmasks[v].at(x, y)) ++hits;
    }
    CHECK(rnd.s_j[static_cast<size_t>(i)] == (hits > 0 ? 1 : 0));
  }
}

TEST_CASE("project_batch fills per-view projections consistently") {
  const Camera cam0 = face_test_camera();
  const Camera cam1 = Camera::look_at(100, 100, 50, 50, 100, 100, {0, 0, 2},
                                      {0, 0, 0}, {0, 1, 0});
  SampleBatch b;
  b.points = {{0, 0, 0}, {0.1, -0.05, 0.2}};
  b.labels = {1, 0};
  b.v_f = {0, 0};
  b.s_j = {0, 0};
  project_batch(b, {cam0, cam1});
  b.validate();
  REQUIRE(b.proj.size() == 2);
  for (size_t v = 0; v < 2; ++v)
    for (size_t i = 0; i < 2; ++i) {
      REQUIRE(b.proj_valid[v][i] == 1);
      const Camera& c = v == 0 ? cam0 : cam1;
      const auto pr = c.project(b.points[i]);
      CHECK(b.proj[v][i].x == pr.pix.x);
      CHECK(b.view_depth[v][i] == doctest::Approx(pr.z));
    }
}

TEST_CASE("sample batch serialization round-trips") {
  const Mesh sphere = make_icosphere(0.25, 2);
  OccupancyOracle oracle(sphere);
  SampleBatch b = sample_training_points(oracle, sphere, 300, 0.02, 0.25, 5,
                                         SampleTag::kFace);
  b.v_f[7] = 1;
  b.s_j[9] = 1;
  save_samples("t_samples.bin", b);
  const SampleBatch r = load_samples("t_samples.bin");
  CHECK(r.tag == SampleTag::kFace);
  REQUIRE(r.size() == b.size());
  for (size_t i = 0; i < b.points.size(); ++i) {
    CHECK(static_cast<float>(b.points[i].x) == static_cast<float>(r.points[i].x));
    CHECK(static_cast<float>(b.points[i].y) == static_cast<float>(r.points[i].y));
    CHECK(static_cast<float>(b.points[i].z) == static_cast<float>(r.points[i].z));
  }
  CHECK(r.labels == b.labels);
  CHECK(r.v_f == b.v_f);
  CHECK(r.s_j == b.s_j);
  std::remove("t_samples.bin");

  std::ofstream bad("t_bad.bin", std::ios::binary);
  bad << "not json\n";
  bad.close();
  CHECK_THROWS_AS(load_samples("t_bad.bin"), IoError);
  CHECK_THROWS_AS(load_samples("missing_samples.bin"), IoError);
  std::remove("t_bad.bin");
}
