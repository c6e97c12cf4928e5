#include "pifield/fusion.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <nlohmann/json.hpp>

#include "pifield/sampling.hpp"

namespace pifield {

namespace {

constexpr double kEdtInf = 1e20;

// Felzenszwalb-Huttenlocher exact squared distance transform, one axis.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v,
            std::vector<double>& z, int n) {
  int k = 0;
  v[0] = 0;
  z[0] = -kEdtInf;
  z[1] = kEdtInf;
  auto vertex = [&](int q, int p) {
    return ((f[static_cast<size_t>(q)] + static_cast<double>(q) * q) -
            (f[static_cast<size_t>(p)] + static_cast<double>(p) * p)) /
           (2.0 * q - 2.0 * p);
  };
  for (int q = 1; q < n; ++q) {
    double s = vertex(q, v[static_cast<size_t>(k)]);
    while (s <= z[static_cast<size_t>(k)]) {
      --k;
      s = vertex(q, v[static_cast<size_t>(k)]);
    }
    ++k;
    v[static_cast<size_t>(k)] = q;
    z[static_cast<size_t>(k)] = s;
    z[static_cast<size_t>(k) + 1] = kEdtInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<size_t>(k)];
    d[static_cast<size_t>(q)] = static_cast<double>(q - p) * (q - p) + f[static_cast<size_t>(p)];
  }
}

}  // namespace

ErodedWeightMap erode_weights(const MaskMap& mask, int band) {
  if (mask.width < 1 || mask.height < 1) throw ShapeError("erode_weights: empty raster");
  if (band < 1) throw ValueError("erode_weights: band must be >= 1");
  ErodedWeightMap out{RasterF32(mask.width, mask.height, 0.0f), band};
  bool any = false;
  for (uint8_t b : mask.m) any = any || (b != 0);
  if (!any) {
    std::fprintf(stderr, "erode_weights: empty mask, weights are all zero\n");
    return out;
  }

  // One pixel of virtual complement around the raster so the border erodes.
  const int W = mask.width + 2, H = mask.height + 2;
  std::vector<double> g(static_cast<size_t>(W) * H, 0.0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(x, y)) g[static_cast<size_t>(y + 1) * W + (x + 1)] = kEdtInf;

  const int n = std::max(W, H);
  std::vector<double> f(static_cast<size_t>(n)), d(static_cast<size_t>(n));
  std::vector<int> v(static_cast<size_t>(n));
  std::vector<double> z(static_cast<size_t>(n) + 1);
  for (int x = 0; x < W; ++x) {
    for (int y = 0; y < H; ++y) f[static_cast<size_t>(y)] = g[static_cast<size_t>(y) * W + x];
    edt_1d(f, d, v, z, H);
    for (int y = 0; y < H; ++y) g[static_cast<size_t>(y) * W + x] = d[static_cast<size_t>(y)];
  }
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) f[static_cast<size_t>(x)] = g[static_cast<size_t>(y) * W + x];
    edt_1d(f, d, v, z, W);
    for (int x = 0; x < W; ++x) g[static_cast<size_t>(y) * W + x] = d[static_cast<size_t>(x)];
  }

  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      const double dist = std::sqrt(g[static_cast<size_t>(y + 1) * W + (x + 1)]);
      out.w.at(x, y) = static_cast<float>(std::clamp(dist / band, 0.0, 1.0));
    }
  return out;
}

void FaceFusionConfig::validate() const {
  cam.validate();
  if (region.empty()) throw ValueError("fusion: empty face region");
  if (depth.width != region.width() || depth.height != region.height())
    throw ShapeError("fusion: face depth extents do not match the region");
  if (weights.w.width != depth.width || weights.w.height != depth.height)
    throw ShapeError("fusion: weight extents do not match the face depth");
  if (!(alpha > 0.0)) throw ValueError("fusion: alpha must be positive");
  if (!(beta > 0.0)) throw ValueError("fusion: beta must be positive");
}

double fusion_weight(const FaceFusionConfig& f, const Vec3& X) {
  const auto pr = f.cam.project(X);
  if (!pr.valid) return 0.0;
  const Vec2 q = f.to_full.to_crop(pr.pix);
  bool ok = false;
  const double d = f.depth.sample(q, &ok);
  if (!ok) return 0.0;
  const double m = bilinear_sample(f.weights.w, q);
  const double p = pr.z - d;
  return m * std::exp(-f.beta * p * p);
}

double fuse(double sigma_b, double sigma_f, double omega) {
  return omega * sigma_f + (1.0 - omega) * sigma_b;
}

namespace {

class FusedField final : public ImplicitField {
 public:
  FusedField(FieldPtr body, FieldPtr face, FaceFusionConfig cfg)
      : body_(std::move(body)), face_(std::move(face)), cfg_(std::move(cfg)) {
    if (!body_ || !face_) throw ValueError("fused field: null input field");
    cfg_.validate();
  }

  double query(const Vec3& X) const override {
    const double sb = body_->query(X);
    if (!facial_flag(X, cfg_.cam, cfg_.depth, cfg_.region, cfg_.alpha)) return sb;
    const double w = fusion_weight(cfg_, X);
    if (w <= 0.0) return sb;
    return fuse(sb, face_->query(X), w);
  }

  std::vector<double> query_batch(const std::vector<Vec3>& pts) const override {
    std::vector<double> out = body_->query_batch(pts);
    std::vector<size_t> sel;
    std::vector<double> ws;
    std::vector<Vec3> fpts;
    for (size_t i = 0; i < pts.size(); ++i) {
      if (!facial_flag(pts[i], cfg_.cam, cfg_.depth, cfg_.region, cfg_.alpha)) continue;
      const double w = fusion_weight(cfg_, pts[i]);
      if (w <= 0.0) continue;
      sel.push_back(i);
      ws.push_back(w);
      fpts.push_back(pts[i]);
    }
    if (!fpts.empty()) {
      const std::vector<double> sf = face_->query_batch(fpts);
      for (size_t k = 0; k < sel.size(); ++k) out[sel[k]] = fuse(out[sel[k]], sf[k], ws[k]);
    }
    return out;
  }

 private:
  FieldPtr body_;
  FieldPtr face_;
  FaceFusionConfig cfg_;
};

}  // namespace

FieldPtr make_fused_field(FieldPtr body, FieldPtr face, FaceFusionConfig cfg) {
  return std::make_shared<FusedField>(std::move(body), std::move(face), std::move(cfg));
}

void OccupancyGrid::validate() const {
  if (nx < 2 || ny < 2 || nz < 2) throw ValueError("grid: resolution must be >= 2 per axis");
  const Vec3 e = bounds.extent();
  if (!(e.x > 0.0 && e.y > 0.0 && e.z > 0.0)) throw ValueError("grid: empty bounds");
  if (values.size() != static_cast<size_t>(nx) * ny * nz)
    throw ShapeError("grid: value count does not match the resolution");
  for (float v : values)
    if (!(v >= 0.0f && v <= 1.0f)) throw ValueError("grid: occupancy outside [0,1]");
}

OccupancyGrid evaluate_grid(const ImplicitField& field, const Box3& bounds, int nx, int ny,
                            int nz) {
  OccupancyGrid g;
  g.bounds = bounds;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  if (nx < 2 || ny < 2 || nz < 2)
    throw ValueError("evaluate_grid: resolution must be >= 2 per axis");
  const Vec3 e = bounds.extent();
  if (!(e.x > 0.0 && e.y > 0.0 && e.z > 0.0)) throw ValueError("evaluate_grid: empty bounds");
  g.values.resize(static_cast<size_t>(nx) * ny * nz);
  std::vector<Vec3> pts(static_cast<size_t>(nx) * ny);
  for (int k = 0; k < nz; ++k) {
    size_t n = 0;
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) pts[n++] = g.center(i, j, k);
    const std::vector<double> vals = field.query_batch(pts);
    for (size_t t = 0; t < vals.size(); ++t) {
      if (!(vals[t] >= 0.0 && vals[t] <= 1.0))
        throw ValueError("evaluate_grid: field value outside [0,1]");
      g.values[static_cast<size_t>(k) * pts.size() + t] = static_cast<float>(vals[t]);
    }
  }
  return g;
}

namespace {

// The 256-case table is generated once from a per-face rule instead of being
// transcribed: on every face the iso segments separate the occupied corners,
// a choice that depends only on the face's own corner states, so the two
// cells sharing a face always agree and the welded mesh closes. Corner c
// sits at ((c&1), (c>>1)&1, (c>>2)&1); bit c of a case index means occupied.
struct McEdge {
  int axis = 0;
  int c0 = 0, c1 = 0;  // c1 = c0 + (1 << axis)
};

// Triangle entries 0..11 name cube edges; entry 12+L names the centroid of
// loop L, listed in loops[cfg].
struct McTables {
  std::array<McEdge, 12> edges{};
  std::array<std::vector<std::array<int, 3>>, 256> tris{};
  std::array<std::vector<std::vector<int>>, 256> loops{};
  std::array<uint16_t, 256> crossed{};
};

McTables build_mc_tables() {
  McTables T;
  int edge_at[8][3];
  for (auto& row : edge_at) row[0] = row[1] = row[2] = -1;
  int ne = 0;
  for (int a = 0; a < 3; ++a)
    for (int c = 0; c < 8; ++c)
      if (!((c >> a) & 1)) {
        T.edges[static_cast<size_t>(ne)] = {a, c, c | (1 << a)};
        edge_at[c][a] = ne;
        ++ne;
      }
  auto cube_edge = [&](int ca, int cb) {
    const int d = ca ^ cb;
    const int a = d == 1 ? 0 : (d == 2 ? 1 : 2);
    return edge_at[ca & ~d][a];
  };

  // Face corners in cyclic order as seen from outside the cube.
  std::array<std::array<int, 4>, 6> faces{};
  int nf = 0;
  for (int a = 0; a < 3; ++a)
    for (int s = 0; s < 2; ++s) {
      const int u = (a + 1) % 3, w = (a + 2) % 3;
      auto corner = [&](int bu, int bw) { return (s << a) | (bu << u) | (bw << w); };
      faces[static_cast<size_t>(nf++)] =
          s ? std::array<int, 4>{corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)}
            : std::array<int, 4>{corner(0, 0), corner(0, 1), corner(1, 1), corner(1, 0)};
    }

  for (int cfg = 0; cfg < 256; ++cfg) {
    uint16_t want = 0;
    for (int e = 0; e < 12; ++e)
      if (((cfg >> T.edges[static_cast<size_t>(e)].c0) & 1) !=
          ((cfg >> T.edges[static_cast<size_t>(e)].c1) & 1))
        want |= static_cast<uint16_t>(1u << e);
    T.crossed[static_cast<size_t>(cfg)] = want;
    if (!want) continue;

    // Directed segments keep the occupied side on the left, so following
    // successors walks each surface loop in a consistent orientation.
    std::array<int, 12> next;
    next.fill(-1);
    for (const auto& q : faces) {
      auto in = [&](int k) { return (cfg >> q[static_cast<size_t>(k & 3)]) & 1; };
      for (int k = 0; k < 4; ++k) {
        if (!(in(k) && !in(k + 1))) continue;
        int m = (k + 3) % 4;
        int guard = 0;
        while (in(m) == in(m + 1)) {
          m = (m + 3) % 4;
          if (++guard > 4) throw std::logic_error("mc tables: unpaired crossing");
        }
        const int src = cube_edge(q[static_cast<size_t>(k)], q[static_cast<size_t>((k + 1) % 4)]);
        const int dst = cube_edge(q[static_cast<size_t>(m)], q[static_cast<size_t>((m + 1) % 4)]);
        if (next[static_cast<size_t>(src)] != -1)
          throw std::logic_error("mc tables: duplicate segment source");
        next[static_cast<size_t>(src)] = dst;
      }
    }

    std::array<int, 12> indeg{};
    for (int e = 0; e < 12; ++e) {
      if (!((want >> e) & 1)) continue;
      if (next[static_cast<size_t>(e)] < 0) throw std::logic_error("mc tables: open segment");
      ++indeg[static_cast<size_t>(next[static_cast<size_t>(e)])];
    }
    for (int e = 0; e < 12; ++e)
      if (((want >> e) & 1) && indeg[static_cast<size_t>(e)] != 1)
        throw std::logic_error("mc tables: crossing not on one loop");

    std::array<bool, 12> used{};
    for (int e0 = 0; e0 < 12; ++e0) {
      if (!((want >> e0) & 1) || used[static_cast<size_t>(e0)]) continue;
      std::vector<int> loop;
      int e = e0;
      do {
        loop.push_back(e);
        used[static_cast<size_t>(e)] = true;
        e = next[static_cast<size_t>(e)];
      } while (e != e0);
      if (loop.size() < 3) throw std::logic_error("mc tables: short loop");
      // Longer loops triangulate as a star around their centroid. A fan
      // diagonal between two crossings of one shared face would be emitted
      // by both adjacent cells, giving a 4-triangle edge; the centroid sits
      // strictly inside the cell, so star edges are never duplicated. Loop
      // orientation carries inward normals; the reversed walk winds out.
      const int ord = static_cast<int>(T.loops[static_cast<size_t>(cfg)].size());
      if (ord >= 4) throw std::logic_error("mc tables: too many loops");
      T.loops[static_cast<size_t>(cfg)].push_back(loop);
      if (loop.size() == 3) {
        T.tris[static_cast<size_t>(cfg)].push_back({loop[0], loop[2], loop[1]});
      } else {
        for (size_t i = 0; i < loop.size(); ++i)
          T.tris[static_cast<size_t>(cfg)].push_back(
              {12 + ord, loop[(i + 1) % loop.size()], loop[i]});
      }
    }
  }
  return T;
}

const McTables& mc_tables() {
  static const McTables t = build_mc_tables();
  return t;
}

}  // namespace

Mesh marching_cubes(const OccupancyGrid& grid, double iso) {
  grid.validate();
  if (!std::isfinite(iso)) throw ValueError("marching_cubes: iso must be finite");
  const McTables& T = mc_tables();
  const int nx = grid.nx, ny = grid.ny, nz = grid.nz;

  // Crossing vertices live on lattice edges, key = node id * 3 + axis; loop
  // centroids get negative per-cell keys. Slabs emit triangles independently
  // and the weld below runs serially in slab order.
  const auto edge_key = [nx, ny](int64_t i, int64_t j, int64_t k, const McEdge& E) {
    const int64_t li = i + (E.c0 & 1), lj = j + ((E.c0 >> 1) & 1), lk = k + ((E.c0 >> 2) & 1);
    return ((lk * ny + lj) * nx + li) * 3 + E.axis;
  };
  std::vector<std::vector<std::array<int64_t, 3>>> slabs(static_cast<size_t>(nz - 1));
  parallel_for(nz - 1, [&](long b, long e) {
    for (long k = b; k < e; ++k) {
      auto& out = slabs[static_cast<size_t>(k)];
      for (int j = 0; j + 1 < ny; ++j)
        for (int i = 0; i + 1 < nx; ++i) {
          int cfg = 0;
          for (int c = 0; c < 8; ++c) {
            const float val =
                grid.at(i + (c & 1), j + ((c >> 1) & 1), static_cast<int>(k) + ((c >> 2) & 1));
            if (static_cast<double>(val) >= iso) cfg |= 1 << c;
          }
          for (const auto& tri : T.tris[static_cast<size_t>(cfg)]) {
            std::array<int64_t, 3> keys{};
            for (int t = 0; t < 3; ++t) {
              const int ei = tri[static_cast<size_t>(t)];
              if (ei >= 12) {
                const int64_t cell = (k * (ny - 1) + j) * (nx - 1) + i;
                keys[static_cast<size_t>(t)] = -(cell * 4 + (ei - 12)) - 1;
              } else {
                keys[static_cast<size_t>(t)] = edge_key(i, j, k, T.edges[static_cast<size_t>(ei)]);
              }
            }
            out.push_back(keys);
          }
        }
    }
  });

  Mesh m;
  std::unordered_map<int64_t, int> vid;
  auto edge_point = [&](int64_t key) {
    const int a = static_cast<int>(key % 3);
    int64_t node = key / 3;
    const int li = static_cast<int>(node % nx);
    node /= nx;
    const int lj = static_cast<int>(node % ny);
    const int lk = static_cast<int>(node / ny);
    const int hi = li + (a == 0), hj = lj + (a == 1), hk = lk + (a == 2);
    const double v0 = grid.at(li, lj, lk), v1 = grid.at(hi, hj, hk);
    const double t = std::clamp((iso - v0) / (v1 - v0), 0.0, 1.0);
    const Vec3 p0 = grid.center(li, lj, lk), p1 = grid.center(hi, hj, hk);
    return Vec3{p0.x + (p1.x - p0.x) * t, p0.y + (p1.y - p0.y) * t, p0.z + (p1.z - p0.z) * t};
  };
  auto vertex_of = [&](int64_t key) {
    const auto it = vid.find(key);
    if (it != vid.end()) return it->second;
    Vec3 p;
    if (key >= 0) {
      p = edge_point(key);
    } else {
      int64_t cell = -(key + 1);
      const int ord = static_cast<int>(cell % 4);
      cell /= 4;
      const int ci = static_cast<int>(cell % (nx - 1));
      cell /= (nx - 1);
      const int cj = static_cast<int>(cell % (ny - 1));
      const int ck = static_cast<int>(cell / (ny - 1));
      int cfg = 0;
      for (int c = 0; c < 8; ++c) {
        const float val = grid.at(ci + (c & 1), cj + ((c >> 1) & 1), ck + ((c >> 2) & 1));
        if (static_cast<double>(val) >= iso) cfg |= 1 << c;
      }
      p = {0, 0, 0};
      const auto& loop = T.loops[static_cast<size_t>(cfg)][static_cast<size_t>(ord)];
      for (const int e : loop)
        p += edge_point(edge_key(ci, cj, ck, T.edges[static_cast<size_t>(e)]));
      p = p / static_cast<double>(loop.size());
    }
    m.vertices.push_back(p);
    const int id = static_cast<int>(m.vertices.size()) - 1;
    vid.emplace(key, id);
    return id;
  };
  for (const auto& slab : slabs)
    for (const auto& keys : slab)
      m.tris.push_back({vertex_of(keys[0]), vertex_of(keys[1]), vertex_of(keys[2])});
  return m;
}

OccupancyGrid tsdf_fuse(const std::vector<DepthMap>& depths, const std::vector<Camera>& cameras,
                        const Box3& bounds, double voxel_size, double trunc) {
  if (depths.empty()) throw ValueError("tsdf: need at least one view");
  if (depths.size() != cameras.size()) throw ShapeError("tsdf: depth and camera counts differ");
  if (!(voxel_size > 0.0)) throw ValueError("tsdf: voxel size must be positive");
  if (!(trunc > 0.0)) throw ValueError("tsdf: truncation must be positive");
  const Vec3 e = bounds.extent();
  if (!(e.x > 0.0 && e.y > 0.0 && e.z > 0.0)) throw ValueError("tsdf: empty bounds");
  for (size_t v = 0; v < depths.size(); ++v) {
    cameras[v].validate();
    if (depths[v].width != cameras[v].width || depths[v].height != cameras[v].height)
      throw ShapeError("tsdf: depth extents do not match the camera");
  }

  OccupancyGrid g;
  g.bounds = bounds;
  g.nx = std::max(2, static_cast<int>(std::ceil(e.x / voxel_size)));
  g.ny = std::max(2, static_cast<int>(std::ceil(e.y / voxel_size)));
  g.nz = std::max(2, static_cast<int>(std::ceil(e.z / voxel_size)));
  // Unobserved voxels read fully occupied: anything no camera can explain is
  // enclosed space, and an all-hole capture meshes to nothing.
  g.values.assign(static_cast<size_t>(g.nx) * g.ny * g.nz, 1.0f);

  parallel_for(g.nz, [&](long b, long en) {
    for (long k = b; k < en; ++k)
      for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
          const Vec3 X = g.center(i, j, static_cast<int>(k));
          double acc = 0.0;
          int nobs = 0;
          for (size_t v = 0; v < depths.size(); ++v) {
            const auto pr = cameras[v].project(X);
            if (!pr.valid) continue;
            const int px = static_cast<int>(std::lround(pr.pix.x));
            const int py = static_cast<int>(std::lround(pr.pix.y));
            if (px < 0 || px >= depths[v].width || py < 0 || py >= depths[v].height) continue;
            if (!depths[v].is_valid(px, py)) {
              // A hole is a ray that saw nothing: free space along it.
              acc += 1.0;
              ++nobs;
              continue;
            }
            const double sdf = static_cast<double>(depths[v].at(px, py)) - pr.z;
            // A view says nothing about space far behind its surface.
            if (sdf <= -trunc) continue;
            acc += std::min(sdf / trunc, 1.0);
            ++nobs;
          }
          if (nobs > 0)
            g.values[static_cast<size_t>(g.idx(i, j, static_cast<int>(k)))] =
                static_cast<float>(std::clamp(0.5 * (1.0 - acc / nobs), 0.0, 1.0));
        }
  });
  return g;
}

void save_grid(const std::string& path, const OccupancyGrid& g) {
  g.validate();
  static_assert(sizeof(float) == 4);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(reinterpret_cast<const char*>(g.values.data()),
           static_cast<std::streamsize>(g.values.size() * 4));
  if (!os) throw IoError("write failed: " + path);
  const nlohmann::json j{{"resolution", {g.nx, g.ny, g.nz}},
                         {"bounds",
                          {{"lo", {g.bounds.lo.x, g.bounds.lo.y, g.bounds.lo.z}},
                           {"hi", {g.bounds.hi.x, g.bounds.hi.y, g.bounds.hi.z}}}}};
  std::ofstream js(path + ".json");
  if (!js) throw IoError("cannot open for write: " + path + ".json");
  js << j.dump(2) << "\n";
  if (!js) throw IoError("write failed: " + path + ".json");
}

OccupancyGrid load_grid(const std::string& path) {
  std::ifstream js(path + ".json");
  if (!js) throw IoError("cannot read: " + path + ".json");
  std::stringstream ss;
  ss << js.rdbuf();
  OccupancyGrid g;
  try {
    const auto j = nlohmann::json::parse(ss.str());
    const auto& res = j.at("resolution");
    g.nx = res.at(0).get<int>();
    g.ny = res.at(1).get<int>();
    g.nz = res.at(2).get<int>();
    const auto& b = j.at("bounds");
    g.bounds.lo = {b.at("lo").at(0).get<double>(), b.at("lo").at(1).get<double>(),
                   b.at("lo").at(2).get<double>()};
    g.bounds.hi = {b.at("hi").at(0).get<double>(), b.at("hi").at(1).get<double>(),
                   b.at("hi").at(2).get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValueError(std::string("grid sidecar: ") + e.what());
  }
  if (g.nx < 2 || g.ny < 2 || g.nz < 2)
    throw ValueError("grid: resolution must be >= 2 per axis");
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read: " + path);
  g.values.resize(static_cast<size_t>(g.nx) * g.ny * g.nz);
  is.read(reinterpret_cast<char*>(g.values.data()),
          static_cast<std::streamsize>(g.values.size() * 4));
  if (is.gcount() != static_cast<std::streamsize>(g.values.size() * 4))
    throw IoError("truncated grid payload: " + path);
  g.validate();
  return g;
}

}  // namespace pifield
