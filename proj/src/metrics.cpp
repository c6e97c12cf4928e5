#include "pifield/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

#include "pifield/rng.hpp"

namespace pifield {

namespace {

// Counter-rng streams: surface sampling and volume sampling.
constexpr uint64_t kSurfaceStream = 0x7375;
constexpr uint64_t kVolumeStream = 0x766f;

void require_metric(double v, double lo, double hi, const char* name) {
  if (!std::isfinite(v) || v < lo || v > hi)
    throw ValueError(std::string("metric report: ") + name + " out of range");
}

double fmt_guard(double v) { return v == 0.0 ? 0.0 : v; }  // normalize -0

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", fmt_guard(v));
  return buf;
}

}  // namespace

void MetricReport::validate() const {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  require_metric(p2s_cm, 0.0, kInf, "p2s_cm");
  require_metric(chamfer_cm, 0.0, kInf, "chamfer_cm");
  require_metric(normal_l2, 0.0, kInf, "normal_l2");
  require_metric(normal_cosine, 0.0, kInf, "normal_cosine");
  require_metric(depth_l1, 0.0, kInf, "depth_l1");
  require_metric(iou, 0.0, 1.0, "iou");
}

std::string metric_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["p2s_cm"] = r.p2s_cm;
  j["chamfer_cm"] = r.chamfer_cm;
  j["normal_l2"] = r.normal_l2;
  j["normal_cosine"] = r.normal_cosine;
  j["depth_l1"] = r.depth_l1;
  j["iou"] = r.iou;
  return j.dump(2);
}

std::string metric_csv_header() {
  return "label,p2s_cm,chamfer_cm,normal_l2,normal_cosine,depth_l1,iou";
}

std::string metric_csv_row(const std::string& label, const MetricReport& r) {
  return label + "," + num(r.p2s_cm) + "," + num(r.chamfer_cm) + "," + num(r.normal_l2) + "," +
         num(r.normal_cosine) + "," + num(r.depth_l1) + "," + num(r.iou);
}

std::vector<Vec3> sample_surface(const Mesh& m, long n, uint64_t seed,
                                 std::vector<Vec3>* normals) {
  if (m.tris.empty()) throw ValueError("sample_surface: empty mesh");
  if (n <= 0) throw ValueError("sample_surface: sample count must be positive");
  const long nv = static_cast<long>(m.vertices.size());
  std::vector<double> cdf(m.tris.size());
  std::vector<Vec3> face_n(m.tris.size());
  double total = 0.0;
  for (size_t t = 0; t < m.tris.size(); ++t) {
    for (const int vi : m.tris[t])
      if (vi < 0 || vi >= nv) throw ValueError("sample_surface: vertex index out of range");
    const Vec3 a = m.vertices[static_cast<size_t>(m.tris[t][0])];
    const Vec3 cr = cross(m.vertices[static_cast<size_t>(m.tris[t][1])] - a,
                          m.vertices[static_cast<size_t>(m.tris[t][2])] - a);
    const double len = norm(cr);
    total += 0.5 * len;
    cdf[t] = total;
    face_n[t] = len > 0.0 ? cr / len : Vec3{0, 0, 0};
  }
  if (!(total > 1e-30)) throw ValueError("sample_surface: zero-area mesh");

  const CounterRng rng(seed, kSurfaceStream);
  std::vector<Vec3> out(static_cast<size_t>(n));
  if (normals) normals->assign(static_cast<size_t>(n), Vec3{0, 0, 0});
  for (long i = 0; i < n; ++i) {
    const double target = rng.uniform_at(3 * static_cast<uint64_t>(i)) * total;
    size_t t = static_cast<size_t>(
        std::upper_bound(cdf.begin(), cdf.end(), target) - cdf.begin());
    if (t >= cdf.size()) t = cdf.size() - 1;  // target can round up onto total
    const Vec3 a = m.vertices[static_cast<size_t>(m.tris[t][0])];
    const Vec3 b = m.vertices[static_cast<size_t>(m.tris[t][1])];
    const Vec3 c = m.vertices[static_cast<size_t>(m.tris[t][2])];
    // sqrt warp keeps the barycentric draw area-uniform over the triangle
    const double su = std::sqrt(rng.uniform_at(3 * static_cast<uint64_t>(i) + 1));
    const double v = rng.uniform_at(3 * static_cast<uint64_t>(i) + 2);
    out[static_cast<size_t>(i)] = a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v);
    if (normals) (*normals)[static_cast<size_t>(i)] = face_n[t];
  }
  return out;
}

std::pair<double, double> chamfer_and_p2s(const Mesh& pred, const Mesh& gt, long n_samples,
                                          uint64_t seed) {
  const std::vector<Vec3> sp = sample_surface(pred, n_samples, seed);
  const std::vector<Vec3> sg = sample_surface(gt, n_samples, seed);
  const TriBvh bp(pred), bg(gt);
  std::vector<double> dpg(static_cast<size_t>(n_samples)), dgp(static_cast<size_t>(n_samples));
  parallel_for(n_samples, [&](long b, long e) {
    for (long i = b; i < e; ++i) {
      dpg[static_cast<size_t>(i)] = bg.distance(sp[static_cast<size_t>(i)]);
      dgp[static_cast<size_t>(i)] = bp.distance(sg[static_cast<size_t>(i)]);
    }
  });
  double spg = 0.0, sgp = 0.0;
  for (long i = 0; i < n_samples; ++i) {
    spg += dpg[static_cast<size_t>(i)];
    sgp += dgp[static_cast<size_t>(i)];
  }
  const double mpg = spg / static_cast<double>(n_samples);
  const double mgp = sgp / static_cast<double>(n_samples);
  return {100.0 * 0.5 * (mpg + mgp), 100.0 * mpg};
}

std::pair<double, double> normal_metrics(const Mesh& pred, const Mesh& gt, long n_samples,
                                         uint64_t seed) {
  std::vector<Vec3> np;
  const std::vector<Vec3> sp = sample_surface(pred, n_samples, seed, &np);
  std::vector<Vec3> gn(gt.tris.size());
  const long nv = static_cast<long>(gt.vertices.size());
  for (size_t t = 0; t < gt.tris.size(); ++t) {
    for (const int vi : gt.tris[t])
      if (vi < 0 || vi >= nv) throw ValueError("normal_metrics: vertex index out of range");
    const Vec3 a = gt.vertices[static_cast<size_t>(gt.tris[t][0])];
    const Vec3 cr = cross(gt.vertices[static_cast<size_t>(gt.tris[t][1])] - a,
                          gt.vertices[static_cast<size_t>(gt.tris[t][2])] - a);
    const double len = norm(cr);
    gn[t] = len > 0.0 ? cr / len : Vec3{0, 0, 0};
  }
  const TriBvh bg(gt);
  std::vector<double> l2(static_cast<size_t>(n_samples)), co(static_cast<size_t>(n_samples));
  parallel_for(n_samples, [&](long b, long e) {
    for (long i = b; i < e; ++i) {
      int tri = 0;
      bg.distance(sp[static_cast<size_t>(i)], nullptr, &tri);
      const Vec3& ng = gn[static_cast<size_t>(tri)];
      const Vec3& n0 = np[static_cast<size_t>(i)];
      l2[static_cast<size_t>(i)] = norm2(n0 - ng);
      co[static_cast<size_t>(i)] = std::max(0.0, 1.0 - dot(n0, ng));
    }
  });
  double sl = 0.0, sc = 0.0;
  for (long i = 0; i < n_samples; ++i) {
    sl += l2[static_cast<size_t>(i)];
    sc += co[static_cast<size_t>(i)];
  }
  return {sl / static_cast<double>(n_samples), sc / static_cast<double>(n_samples)};
}

double volumetric_iou(const ImplicitField& a, const ImplicitField& b, const Box3& bounds,
                      long n_samples, uint64_t seed) {
  if (n_samples <= 0) throw ValueError("volumetric iou: sample count must be positive");
  const Vec3 ext = bounds.extent();
  if (!(ext.x > 0.0) || !(ext.y > 0.0) || !(ext.z > 0.0))
    throw ValueError("volumetric iou: empty bounds");
  const CounterRng rng(seed, kVolumeStream);
  constexpr long kChunk = 65536;
  long inter = 0, uni = 0;
  std::vector<Vec3> pts;
  for (long base = 0; base < n_samples; base += kChunk) {
    const long m = std::min(kChunk, n_samples - base);
    pts.resize(static_cast<size_t>(m));
    for (long i = 0; i < m; ++i) {
      const uint64_t c = 3 * static_cast<uint64_t>(base + i);
      pts[static_cast<size_t>(i)] = {rng.uniform_at(c, bounds.lo.x, bounds.hi.x),
                                     rng.uniform_at(c + 1, bounds.lo.y, bounds.hi.y),
                                     rng.uniform_at(c + 2, bounds.lo.z, bounds.hi.z)};
    }
    const std::vector<double> va = a.query_batch(pts);
    const std::vector<double> vb = b.query_batch(pts);
    for (long i = 0; i < m; ++i) {
      const bool oa = va[static_cast<size_t>(i)] > 0.5;
      const bool ob = vb[static_cast<size_t>(i)] > 0.5;
      inter += oa && ob;
      uni += oa || ob;
    }
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double depth_l1(const DepthMap& pred, const DepthMap& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    throw ShapeError("depth l1: " + std::to_string(pred.width) + "x" +
                     std::to_string(pred.height) + " vs " + std::to_string(gt.width) + "x" +
                     std::to_string(gt.height));
  double sum = 0.0;
  long cnt = 0;
  for (size_t i = 0; i < pred.depth.size(); ++i)
    if (pred.valid[i] && gt.valid[i]) {
      sum += std::abs(static_cast<double>(pred.depth[i]) - gt.depth[i]);
      ++cnt;
    }
  if (cnt == 0) {
    std::fprintf(stderr, "depth_l1: no co-valid pixels\n");
    return 0.0;
  }
  return sum / static_cast<double>(cnt);
}

}  // namespace pifield
