#pragma once

#include <array>

#include "pifield/common.hpp"

namespace pifield {

struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> tris;
  std::vector<Vec3> normals;  // optional, per-vertex, unit length

  // Index range and degenerate-triangle checks (area tolerance 1e-12 m^2).
  void validate() const;
  Box3 bounds() const;
  double area() const;
  Mesh transformed(const Mat4& rigid) const;
  bool empty() const { return tris.empty(); }
};

// Divergence-theorem volume; positive when triangles wind outward. Only
// meaningful for closed meshes.
double mesh_signed_volume(const Mesh& m);

Mesh make_icosphere(double radius, int subdivisions, const Vec3& center = {0, 0, 0});

// Closed axis-aligned box, 12 triangles, outward winding.
Mesh make_box_mesh(const Vec3& center, const Vec3& half_extents);

// Closest point on triangle abc to p; handles vertex, edge, and face regions.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

// Exact minimum distance from p to the surface. Builds no structure: O(T)
// per call; use TriBvh for repeated queries.
double point_to_surface(const Vec3& p, const Mesh& m);

// Median-split AABB tree over triangles for nearest-point and ray queries.
class TriBvh {
 public:
  explicit TriBvh(const Mesh& m);

  double distance(const Vec3& p, Vec3* closest = nullptr, int* tri = nullptr) const;

  struct Hit {
    double t = 0;
    int tri = -1;
    bool hit = false;
  };
  // Nearest intersection with t > tmin; t is in units of |dir|.
  Hit raycast(const Vec3& o, const Vec3& dir, double tmin = 1e-9) const;
  // Number of intersections with t > tmin along the full ray. Grazing hits
  // can double-count; parity consumers vote over jittered directions.
  int count_crossings(const Vec3& o, const Vec3& dir, double tmin = 1e-9) const;

  const Box3& bounds() const { return nodes_[0].box; }

 private:
  struct BvhNode {
    Box3 box;
    int left = -1, right = -1;  // internal children, or
    int first = 0, count = 0;   // leaf triangle range
  };
  struct Tri {
    Vec3 a, b, c;
    int index;
  };
  int build(int first, int count);
  std::vector<BvhNode> nodes_;
  std::vector<Tri> tris_;
};

// Parity-vote inside test for closed meshes: three deterministically
// jittered ray directions, majority of odd crossing counts. Pure function
// of the point bits, so results are reproducible across runs and threads.
bool mesh_contains(const TriBvh& bvh, const Vec3& p);

}  // namespace pifield
