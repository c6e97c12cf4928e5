#include "pifield/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pifield/rng.hpp"

namespace pifield {

void SampleBatch::validate() const {
  const size_t n = points.size();
  if (labels.size() != n || v_f.size() != n || s_j.size() != n)
    throw ShapeError("sample batch: flag arrays disagree with point count");
  for (const auto& v : proj)
    if (v.size() != n) throw ShapeError("sample batch: projection count");
  for (const auto& v : view_depth)
    if (v.size() != n) throw ShapeError("sample batch: view depth count");
  for (const auto& v : proj_valid)
    if (v.size() != n) throw ShapeError("sample batch: projection validity count");
}

void require_watertight(const Mesh& m) {
  m.validate();
  std::map<std::pair<int, int>, int> edges;
  for (const auto& t : m.tris) {
    for (int e = 0; e < 3; ++e) {
      const int a = t[static_cast<size_t>(e)], b = t[static_cast<size_t>((e + 1) % 3)];
      ++edges[{std::min(a, b), std::max(a, b)}];
    }
  }
  for (const auto& [edge, count] : edges) {
    if (count != 2) {
      std::ostringstream ss;
      ss << "mesh not watertight: edge (" << edge.first << "," << edge.second
         << ") belongs to " << count << " triangle(s)";
      throw ValueError(ss.str());
    }
  }
}

OccupancyOracle::OccupancyOracle(ScenePtr scene) : scene_(std::move(scene)) {
  if (!scene_) throw ValueError("occupancy oracle: null scene");
}

OccupancyOracle::OccupancyOracle(const Mesh& mesh)
    : mesh_(std::make_shared<Mesh>(mesh)) {
  require_watertight(*mesh_);
  bvh_ = std::make_shared<TriBvh>(*mesh_);
}

bool OccupancyOracle::occupied(const Vec3& X) const {
  if (scene_) return scene_->sdf(X) <= 0.0;
  return mesh_contains(*bvh_, X);
}

Box3 OccupancyOracle::bounds() const {
  return scene_ ? scene_->bounds() : mesh_->bounds();
}

namespace {

// Counter layout per point i, all in one uniform stream:
// normal_at(16i + j), j < 3, burns uniform slots [32i, 32i+6); plain
// uniforms live in [32i+16, 32i+32). The two ranges never meet.
constexpr uint64_t kNormBlock = 16;
constexpr uint64_t kUniBase = 16;

}  // namespace

SampleBatch sample_training_points(const OccupancyOracle& oracle,
                                   const Mesh& surface, long n,
                                   double sigma_near, double uniform_frac,
                                   uint64_t seed, SampleTag tag) {
  if (n <= 0) throw ValueError("sampler: point count must be positive");
  if (sigma_near < 0) throw ValueError("sampler: sigma_near must be >= 0");
  if (uniform_frac < 0 || uniform_frac > 1)
    throw ValueError("sampler: uniform_frac must be in [0,1]");
  if (surface.empty() && uniform_frac < 1)
    throw ValueError("sampler: surface points need a mesh");

  const long n_uni = std::lround(uniform_frac * static_cast<double>(n));
  const long n_surf = n - n_uni;

  // Area-weighted triangle table.
  std::vector<double> cum;
  double total = 0;
  if (n_surf > 0) {
    cum.reserve(surface.tris.size());
    for (const auto& t : surface.tris) {
      const Vec3 e1 = surface.vertices[t[1]] - surface.vertices[t[0]];
      const Vec3 e2 = surface.vertices[t[2]] - surface.vertices[t[0]];
      total += 0.5 * norm(cross(e1, e2));
      cum.push_back(total);
    }
    if (total <= 0) throw ValueError("sampler: surface has no area");
  }

  const Box3 box = oracle.bounds().expanded(0.1);
  const CounterRng rng(seed, static_cast<uint64_t>(tag));

  SampleBatch batch;
  batch.tag = tag;
  batch.points.resize(static_cast<size_t>(n));
  batch.labels.resize(static_cast<size_t>(n));
  batch.v_f.assign(static_cast<size_t>(n), 0);
  batch.s_j.assign(static_cast<size_t>(n), 0);

  parallel_for(n, [&](long i0, long i1) {
    for (long i = i0; i < i1; ++i) {
      const uint64_t u = 2 * kNormBlock * static_cast<uint64_t>(i) + kUniBase;
      Vec3 p;
      if (i < n_surf) {
        const double pick = rng.uniform_at(u) * total;
        const size_t ti = static_cast<size_t>(
            std::upper_bound(cum.begin(), cum.end(), pick) - cum.begin());
        const auto& t = surface.tris[std::min(ti, surface.tris.size() - 1)];
        double b1 = rng.uniform_at(u + 1), b2 = rng.uniform_at(u + 2);
        if (b1 + b2 > 1) {
          b1 = 1 - b1;
          b2 = 1 - b2;
        }
        p = surface.vertices[t[0]] +
            (surface.vertices[t[1]] - surface.vertices[t[0]]) * b1 +
            (surface.vertices[t[2]] - surface.vertices[t[0]]) * b2;
        const uint64_t c = kNormBlock * static_cast<uint64_t>(i);
        p += Vec3{sigma_near * rng.normal_at(c), sigma_near * rng.normal_at(c + 1),
                  sigma_near * rng.normal_at(c + 2)};
      } else {
        p = Vec3{rng.uniform_at(u, box.lo.x, box.hi.x),
                 rng.uniform_at(u + 1, box.lo.y, box.hi.y),
                 rng.uniform_at(u + 2, box.lo.z, box.hi.z)};
      }
      batch.points[static_cast<size_t>(i)] = p;
      batch.labels[static_cast<size_t>(i)] = oracle.occupied(p) ? 1 : 0;
    }
  });
  return batch;
}

void project_batch(SampleBatch& batch, const std::vector<Camera>& cameras) {
  const size_t n = batch.points.size();
  batch.proj.assign(cameras.size(), std::vector<Vec2>(n));
  batch.view_depth.assign(cameras.size(), std::vector<float>(n, 0.0f));
  batch.proj_valid.assign(cameras.size(), std::vector<uint8_t>(n, 0));
  for (size_t v = 0; v < cameras.size(); ++v) {
    for (size_t i = 0; i < n; ++i) {
      const auto pr = cameras[v].project(batch.points[i]);
      if (!pr.valid) continue;
      batch.proj[v][i] = pr.pix;
      batch.view_depth[v][i] = static_cast<float>(pr.z);
      batch.proj_valid[v][i] = 1;
    }
  }
}

bool facial_flag(const Vec3& X, const Camera& front, const DepthMap& face_depth,
                 const PixelBox& face_region, double alpha) {
  if (face_depth.width != face_region.width() ||
      face_depth.height != face_region.height())
    throw ShapeError("facial flag: face depth does not match the region");
  if (alpha <= 0) throw ValueError("facial flag: alpha must be positive");
  const auto pr = front.project(X);
  if (!pr.valid) return false;
  // The region covers pixel centers [x0, x1); continuous extent +-0.5.
  if (pr.pix.x < face_region.x0 - 0.5 || pr.pix.x >= face_region.x1 - 0.5 ||
      pr.pix.y < face_region.y0 - 0.5 || pr.pix.y >= face_region.y1 - 0.5)
    return false;
  bool ok = false;
  const float sampled = face_depth.sample(
      {pr.pix.x - face_region.x0, pr.pix.y - face_region.y0}, &ok);
  if (!ok) return false;
  return std::abs(pr.z - static_cast<double>(sampled)) < alpha;
}

void mark_sj(SampleBatch& batch, const std::vector<MaskMap>& jump_masks,
             const std::vector<Camera>& cameras, int k) {
  if (jump_masks.size() != cameras.size())
    throw ShapeError("mark_sj: mask and camera counts disagree");
  if (k < 0) throw ValueError("mark_sj: k must be >= 0");
  batch.s_j.assign(batch.points.size(), 0);
  for (size_t i = 0; i < batch.points.size(); ++i) {
    int hits = 0;
    for (size_t v = 0; v < cameras.size(); ++v) {
      const auto pr = cameras[v].project(batch.points[i]);
      if (!pr.valid) continue;
      const int x = static_cast<int>(std::lround(pr.pix.x));
      const int y = static_cast<int>(std::lround(pr.pix.y));
      if (x < 0 || y < 0 || x >= jump_masks[v].width || y >= jump_masks[v].height)
        continue;
      if (jump_masks[v].at(x, y)) ++hits;
    }
    if (hits > k) batch.s_j[i] = 1;
  }
}

void save_samples(const std::string& path, const SampleBatch& batch) {
  batch.validate();
  nlohmann::json header;
  header["count"] = batch.points.size();
  header["tag"] = static_cast<int>(batch.tag);
  const std::string h = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("samples: cannot open " + path + " for writing");
  out << h << '\n';
  std::vector<float> xyz;
  xyz.reserve(batch.points.size() * 3);
  for (const auto& p : batch.points) {
    xyz.push_back(static_cast<float>(p.x));
    xyz.push_back(static_cast<float>(p.y));
    xyz.push_back(static_cast<float>(p.z));
  }
  out.write(reinterpret_cast<const char*>(xyz.data()),
            static_cast<std::streamsize>(xyz.size() * sizeof(float)));
  const auto write_u8 = [&](const std::vector<uint8_t>& v) {
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(v.size()));
  };
  write_u8(batch.labels);
  write_u8(batch.v_f);
  write_u8(batch.s_j);
  if (!out) throw IoError("samples: short write to " + path);
}

SampleBatch load_samples(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("samples: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("samples: missing header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("samples: bad header: ") + e.what());
  }
  if (!header.contains("count") || !header.contains("tag"))
    throw IoError("samples: header lacks count/tag");
  const size_t n = header["count"].get<size_t>();
  const int tag = header["tag"].get<int>();
  if (tag != 0 && tag != 1) throw IoError("samples: unknown tag");

  SampleBatch batch;
  batch.tag = static_cast<SampleTag>(tag);
  std::vector<float> xyz(n * 3);
  in.read(reinterpret_cast<char*>(xyz.data()),
          static_cast<std::streamsize>(xyz.size() * sizeof(float)));
  batch.points.resize(n);
  for (size_t i = 0; i < n; ++i)
    batch.points[i] = {xyz[3 * i], xyz[3 * i + 1], xyz[3 * i + 2]};
  const auto read_u8 = [&](std::vector<uint8_t>& v) {
    v.resize(n);
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n));
  };
  read_u8(batch.labels);
  read_u8(batch.v_f);
  read_u8(batch.s_j);
  if (!in) throw IoError("samples: truncated payload in " + path);
  return batch;
}

}  // namespace pifield
