#include "pifield/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>

#include "pifield/rng.hpp"

namespace pifield {

void Mesh::validate() const {
  const int nv = static_cast<int>(vertices.size());
  for (const auto& t : tris) {
    for (int i : t)
      if (i < 0 || i >= nv) throw ValueError("mesh: triangle index out of range");
    const Vec3 e1 = vertices[t[1]] - vertices[t[0]];
    const Vec3 e2 = vertices[t[2]] - vertices[t[0]];
    if (0.5 * norm(cross(e1, e2)) <= 1e-12)
      throw ValueError("mesh: degenerate triangle below area tolerance");
  }
  if (!normals.empty() && normals.size() != vertices.size())
    throw ShapeError("mesh: normal count != vertex count");
}

Box3 Mesh::bounds() const {
  if (vertices.empty()) throw ValueError("mesh: empty");
  Box3 b{vertices[0], vertices[0]};
  for (const auto& v : vertices) b.grow(v);
  return b;
}

double Mesh::area() const {
  double a = 0;
  for (const auto& t : tris)
    a += 0.5 * norm(cross(vertices[t[1]] - vertices[t[0]], vertices[t[2]] - vertices[t[0]]));
  return a;
}

Mesh Mesh::transformed(const Mat4& rigid) const {
  Mesh m = *this;
  for (auto& v : m.vertices) v = rigid.transform_point(v);
  for (auto& n : m.normals) n = rigid.rotate(n);
  return m;
}

double mesh_signed_volume(const Mesh& m) {
  double v = 0;
  for (const auto& t : m.tris)
    v += dot(m.vertices[t[0]], cross(m.vertices[t[1]], m.vertices[t[2]])) / 6.0;
  return v;
}

Mesh make_icosphere(double radius, int subdivisions, const Vec3& center) {
  if (radius <= 0) throw ValueError("icosphere: radius must be positive");
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                         {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                         {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) p = normalized(p);
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
      {3, 8, 9},   {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      v.push_back(normalized((v[a] + v[b]) * 0.5));
      const int idx = static_cast<int>(v.size()) - 1;
      midpoint[key] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> nf;
    nf.reserve(f.size() * 4);
    for (const auto& tr : f) {
      const int ab = mid(tr[0], tr[1]), bc = mid(tr[1], tr[2]), ca = mid(tr[2], tr[0]);
      nf.push_back({tr[0], ab, ca});
      nf.push_back({tr[1], bc, ab});
      nf.push_back({tr[2], ca, bc});
      nf.push_back({ab, bc, ca});
    }
    f = std::move(nf);
  }
  Mesh m;
  m.vertices.reserve(v.size());
  m.normals.reserve(v.size());
  for (const auto& p : v) {
    m.vertices.push_back(center + p * radius);
    m.normals.push_back(p);
  }
  m.tris = std::move(f);
  return m;
}

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = dot(ab, ap), d2 = dot(ac, ap);
  if (d1 <= 0 && d2 <= 0) return a;

  const Vec3 bp = p - b;
  const double d3 = dot(ab, bp), d4 = dot(ac, bp);
  if (d3 >= 0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));

  const Vec3 cp = p - c;
  const double d5 = dot(ab, cp), d6 = dot(ac, cp);
  if (d6 >= 0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0)
    return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

Mesh make_box_mesh(const Vec3& center, const Vec3& half_extents) {
  const Vec3& h = half_extents;
  if (h.x <= 0 || h.y <= 0 || h.z <= 0)
    throw ValueError("box mesh: half extents must be positive");
  Mesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back(center + Vec3{i & 1 ? h.x : -h.x, i & 2 ? h.y : -h.y,
                                       i & 4 ? h.z : -h.z});
  // Two triangles per face, outward winding.
  const int f[6][4] = {{0, 4, 6, 2}, {1, 3, 7, 5}, {0, 1, 5, 4},
                       {2, 6, 7, 3}, {0, 2, 3, 1}, {4, 5, 7, 6}};
  for (const auto& q : f) {
    m.tris.push_back({q[0], q[1], q[2]});
    m.tris.push_back({q[0], q[2], q[3]});
  }
  return m;
}

double point_to_surface(const Vec3& p, const Mesh& m) {
  if (m.empty()) throw ValueError("point_to_surface: empty mesh");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& t : m.tris) {
    const Vec3 q =
        closest_point_on_triangle(p, m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
    best = std::min(best, norm2(p - q));
  }
  return std::sqrt(best);
}

namespace {

double box_dist2(const Box3& b, const Vec3& p) {
  auto ax = [](double v, double lo, double hi) {
    const double d = v < lo ? lo - v : (v > hi ? v - hi : 0.0);
    return d * d;
  };
  return ax(p.x, b.lo.x, b.hi.x) + ax(p.y, b.lo.y, b.hi.y) + ax(p.z, b.lo.z, b.hi.z);
}

bool box_hit(const Box3& b, const Vec3& o, const Vec3& inv_dir, double tmax) {
  double t0 = 0.0, t1 = tmax;
  for (int a = 0; a < 3; ++a) {
    const double lo = (a == 0 ? b.lo.x : a == 1 ? b.lo.y : b.lo.z);
    const double hi = (a == 0 ? b.hi.x : a == 1 ? b.hi.y : b.hi.z);
    const double ov = o[a], iv = a == 0 ? inv_dir.x : a == 1 ? inv_dir.y : inv_dir.z;
    double ta = (lo - ov) * iv, tb = (hi - ov) * iv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

// Moller-Trumbore, double precision.
bool ray_tri(const Vec3& o, const Vec3& d, const Vec3& a, const Vec3& b, const Vec3& c,
             double& t) {
  const Vec3 e1 = b - a, e2 = c - a;
  const Vec3 pv = cross(d, e2);
  const double det = dot(e1, pv);
  if (std::fabs(det) < 1e-14) return false;
  const double inv = 1.0 / det;
  const Vec3 tv = o - a;
  const double u = dot(tv, pv) * inv;
  if (u < 0.0 || u > 1.0) return false;
  const Vec3 qv = cross(tv, e1);
  const double vv = dot(d, qv) * inv;
  if (vv < 0.0 || u + vv > 1.0) return false;
  t = dot(e2, qv) * inv;
  return true;
}

}  // namespace

TriBvh::TriBvh(const Mesh& m) {
  if (m.empty()) throw ValueError("bvh: empty mesh");
  tris_.reserve(m.tris.size());
  for (size_t i = 0; i < m.tris.size(); ++i) {
    const auto& t = m.tris[i];
    tris_.push_back({m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]],
                     static_cast<int>(i)});
  }
  nodes_.reserve(2 * tris_.size());
  build(0, static_cast<int>(tris_.size()));
}

int TriBvh::build(int first, int count) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  Box3 box{tris_[first].a, tris_[first].a};
  for (int i = first; i < first + count; ++i) {
    box.grow(tris_[i].a);
    box.grow(tris_[i].b);
    box.grow(tris_[i].c);
  }
  nodes_[id].box = box;
  if (count <= 4) {
    nodes_[id].first = first;
    nodes_[id].count = count;
    return id;
  }
  const Vec3 e = box.extent();
  const int axis = (e.x >= e.y && e.x >= e.z) ? 0 : (e.y >= e.z ? 1 : 2);
  auto centroid = [axis](const Tri& t) {
    return ((t.a[axis]) + (t.b[axis]) + (t.c[axis])) / 3.0;
  };
  const int mid = first + count / 2;
  std::nth_element(tris_.begin() + first, tris_.begin() + mid, tris_.begin() + first + count,
                   [&](const Tri& x, const Tri& y) { return centroid(x) < centroid(y); });
  const int l = build(first, mid - first);
  const int r = build(mid, first + count - mid);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

double TriBvh::distance(const Vec3& p, Vec3* closest, int* tri) const {
  double best2 = std::numeric_limits<double>::infinity();
  Vec3 bestq;
  int bestt = -1;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const BvhNode& n = nodes_[id];
    if (box_dist2(n.box, p) >= best2) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        const Vec3 q = closest_point_on_triangle(p, tris_[i].a, tris_[i].b, tris_[i].c);
        const double d2 = norm2(p - q);
        if (d2 < best2) {
          best2 = d2;
          bestq = q;
          bestt = tris_[i].index;
        }
      }
      continue;
    }
    // Visit the nearer child first so pruning bites sooner.
    const double dl = box_dist2(nodes_[n.left].box, p);
    const double dr = box_dist2(nodes_[n.right].box, p);
    if (dl < dr) {
      stack.push_back(n.right);
      stack.push_back(n.left);
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  if (closest) *closest = bestq;
  if (tri) *tri = bestt;
  return std::sqrt(best2);
}

TriBvh::Hit TriBvh::raycast(const Vec3& o, const Vec3& dir, double tmin) const {
  Hit best;
  best.t = std::numeric_limits<double>::infinity();
  const Vec3 inv{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const BvhNode& n = nodes_[id];
    if (!box_hit(n.box, o, inv, best.t)) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        double t;
        if (ray_tri(o, dir, tris_[i].a, tris_[i].b, tris_[i].c, t) && t > tmin && t < best.t) {
          best.t = t;
          best.tri = tris_[i].index;
          best.hit = true;
        }
      }
      continue;
    }
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  return best;
}

int TriBvh::count_crossings(const Vec3& o, const Vec3& dir, double tmin) const {
  int count = 0;
  const Vec3 inv{1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z};
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    const BvhNode& n = nodes_[id];
    if (!box_hit(n.box, o, inv, std::numeric_limits<double>::infinity())) continue;
    if (n.left < 0) {
      for (int i = n.first; i < n.first + n.count; ++i) {
        double t;
        if (ray_tri(o, dir, tris_[i].a, tris_[i].b, tris_[i].c, t) && t > tmin) ++count;
      }
      continue;
    }
    stack.push_back(n.left);
    stack.push_back(n.right);
  }
  return count;
}

bool mesh_contains(const TriBvh& bvh, const Vec3& p) {
  // Direction jitter is keyed by the point's bit pattern, never by call
  // order.
  uint64_t h = 0x6b43a9b5;
  auto mixd = [&h](double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    h = hash_combine(h, u);
  };
  mixd(p.x);
  mixd(p.y);
  mixd(p.z);
  CounterRng rng(h, 0);
  int odd = 0;
  for (uint64_t j = 0; j < 3; ++j) {
    const double a = rng.uniform_at(2 * j, 0.0, 2.0 * 3.14159265358979323846);
    const double z = rng.uniform_at(2 * j + 1, -0.99, 0.99);
    const double r = std::sqrt(1.0 - z * z);
    const Vec3 dir{r * std::cos(a), r * std::sin(a), z};
    if (bvh.count_crossings(p, dir) % 2 == 1) ++odd;
  }
  return odd >= 2;
}

}  // namespace pifield
