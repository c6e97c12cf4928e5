#include "pifield/capture.hpp"

#include <algorithm>
#include <cmath>

#include "pifield/rng.hpp"

namespace pifield {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr int kTraceSteps = 256;
constexpr double kTraceTol = 1e-4;

float shade(const Vec3& normal, const Vec3& to_cam) {
  const double c = std::max(0.0, dot(normal, to_cam));
  return static_cast<float>(0.1 + 0.85 * c);
}
}  // namespace

std::vector<Camera> make_rig(const RigConfig& cfg) {
  if (cfg.radius_m <= 0) throw ValueError("rig: radius must be positive");
  if (cfg.image_size <= 1) throw ValueError("rig: image size too small");
  if (cfg.fov_deg <= 0 || cfg.fov_deg >= 180)
    throw ValueError("rig: fov out of range");
  if (cfg.azimuths_deg.empty()) throw ValueError("rig: no azimuths");

  const int n = cfg.image_size;
  const double f = 0.5 * n / std::tan(0.5 * cfg.fov_deg * kPi / 180.0);
  const double c = 0.5 * (n - 1);
  std::vector<Camera> cams;
  cams.reserve(cfg.azimuths_deg.size());
  for (const double az_deg : cfg.azimuths_deg) {
    const double az = az_deg * kPi / 180.0;
    const Vec3 eye = cfg.target + Vec3{cfg.radius_m * std::sin(az), cfg.height_m,
                                       -cfg.radius_m * std::cos(az)};
    cams.push_back(Camera::look_at(f, f, c, c, n, n, eye, cfg.target, {0, 1, 0}));
  }
  return cams;
}

ViewRender render_view(const Mesh& mesh, const TriBvh& bvh, const Camera& cam) {
  cam.validate();
  ViewRender out{DepthMap(cam.width, cam.height), MaskMap(cam.width, cam.height),
                 RgbImage(cam.width, cam.height)};
  parallel_for(cam.height, [&](long y0, long y1) {
    for (long y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        Vec3 o, dir;
        cam.pixel_ray({static_cast<double>(x), static_cast<double>(y)}, o, dir);
        const auto hit = bvh.raycast(o, dir);
        if (!hit.hit) continue;
        // pixel_ray scales dir so the ray parameter is camera depth.
        out.depth.set(x, static_cast<int>(y), static_cast<float>(hit.t));
        out.mask.at(x, static_cast<int>(y)) = 1;
        const auto& t = mesh.tris[static_cast<size_t>(hit.tri)];
        Vec3 n = cross(mesh.vertices[t[1]] - mesh.vertices[t[0]],
                       mesh.vertices[t[2]] - mesh.vertices[t[0]]);
        const double nn = norm(n);
        float v = 0.1f;
        if (nn > 1e-14) {
          n = n / nn;
          const Vec3 to_cam = normalized(dir * -1.0);
          if (dot(n, to_cam) < 0) n = n * -1.0;
          v = shade(n, to_cam);
        }
        for (int ch = 0; ch < 3; ++ch) out.rgb.at(ch, x, static_cast<int>(y)) = v;
      }
    }
  });
  return out;
}

ViewRender render_view(const SceneSdf& scene, const Camera& cam) {
  cam.validate();
  ViewRender out{DepthMap(cam.width, cam.height), MaskMap(cam.width, cam.height),
                 RgbImage(cam.width, cam.height)};
  const Box3 box = scene.bounds();
  const Vec3 eye = cam.position();
  const double t_max =
      norm(box.center() - eye) + 0.5 * norm(box.extent()) + 1.0;

  parallel_for(cam.height, [&](long y0, long y1) {
    for (long y = y0; y < y1; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        Vec3 o, dir;
        cam.pixel_ray({static_cast<double>(x), static_cast<double>(y)}, o, dir);
        const Vec3 d = normalized(dir);
        double t = 0;
        bool found = false;
        for (int step = 0; step < kTraceSteps; ++step) {
          const Vec3 p = o + d * t;
          const double sd = scene.sdf(p);
          if (sd < kTraceTol) {
            found = true;
            break;
          }
          t += sd;
          if (t > t_max) break;
        }
        if (!found) continue;
        const Vec3 p = o + d * t;
        const double depth = cam.world_to_cam.transform_point(p).z;
        if (depth <= 0) continue;
        out.depth.set(x, static_cast<int>(y), static_cast<float>(depth));
        out.mask.at(x, static_cast<int>(y)) = 1;
        const Vec3 n = sdf_normal(scene, p);
        const float v = shade(n, normalized(eye - p));
        for (int ch = 0; ch < 3; ++ch) out.rgb.at(ch, x, static_cast<int>(y)) = v;
      }
    }
  });
  return out;
}

void NoiseModel::validate() const {
  if (sigma_base < 0) throw ValueError("noise: sigma_base must be >= 0");
  if (dropout_rate < 0 || dropout_rate > 1)
    throw ValueError("noise: dropout_rate must be in [0,1]");
  if (jump_threshold <= 0) throw ValueError("noise: jump threshold must be > 0");
}

MaskMap depth_jump_mask(const DepthMap& depth, double th) {
  if (th <= 0) throw ValueError("jump mask: threshold must be > 0");
  MaskMap mask(depth.width, depth.height);
  for (int y = 0; y < depth.height; ++y) {
    for (int x = 0; x < depth.width; ++x) {
      float lo = std::numeric_limits<float>::max(), hi = -lo;
      bool hole = false;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx, ny = y + dy;
          if (nx < 0 || ny < 0 || nx >= depth.width || ny >= depth.height)
            continue;
          if (!depth.is_valid(nx, ny)) {
            hole = true;
          } else {
            lo = std::min(lo, depth.at(nx, ny));
            hi = std::max(hi, depth.at(nx, ny));
          }
        }
      }
      if (hole || (hi > lo && hi - lo > th)) mask.at(x, y) = 1;
    }
  }
  return mask;
}

DepthMap add_noise(const DepthMap& gt, const NoiseModel& model, int view_index) {
  model.validate();
  if (view_index < 0) throw ValueError("noise: view index must be >= 0");
  DepthMap out = gt;
  if (model.sigma_base == 0 && model.dropout_rate == 0) return out;

  const MaskMap band = depth_jump_mask(gt, model.jump_threshold);
  CounterRng rng(model.seed, static_cast<uint64_t>(view_index));
  // normal_at(i) burns uniform counters 2i and 2i+1; dropout draws live past
  // that range so the two never collide.
  const uint64_t n_px =
      static_cast<uint64_t>(gt.width) * static_cast<uint64_t>(gt.height);
  for (int y = 0; y < gt.height; ++y) {
    for (int x = 0; x < gt.width; ++x) {
      if (!gt.is_valid(x, y)) continue;
      const uint64_t pix =
          static_cast<uint64_t>(y) * static_cast<uint64_t>(gt.width) +
          static_cast<uint64_t>(x);
      if (band.at(x, y) && model.dropout_rate > 0 &&
          rng.uniform_at(2 * n_px + pix) < model.dropout_rate) {
        out.valid[static_cast<size_t>(y) * gt.width + x] = 0;
        out.at(x, y) = 0.0f;
        continue;
      }
      if (model.sigma_base > 0) {
        const double d = gt.at(x, y);
        const double sigma =
            model.sigma_base * (1.0 + model.depth_coeff * (d - 1.0) * (d - 1.0));
        out.at(x, y) = static_cast<float>(d + sigma * rng.normal_at(pix));
      }
    }
  }
  return out;
}

PixelBox project_face_box(const Camera& cam, const Box3& box) {
  double x0 = 1e30, y0 = 1e30, x1 = -1e30, y1 = -1e30;
  for (int i = 0; i < 8; ++i) {
    const Vec3 corner{i & 1 ? box.hi.x : box.lo.x, i & 2 ? box.hi.y : box.lo.y,
                      i & 4 ? box.hi.z : box.lo.z};
    const auto p = cam.project(corner);
    if (!p.valid) throw ValueError("face box: corner behind the camera");
    x0 = std::min(x0, p.pix.x);
    y0 = std::min(y0, p.pix.y);
    x1 = std::max(x1, p.pix.x);
    y1 = std::max(y1, p.pix.y);
  }
  const PixelBox full{static_cast<int>(std::floor(x0)),
                      static_cast<int>(std::floor(y0)),
                      static_cast<int>(std::ceil(x1)) + 1,
                      static_cast<int>(std::ceil(y1)) + 1};
  return full.clipped(cam.width, cam.height);
}

FaceCrop face_crop(const RgbImage& rgb, const DepthMap& depth,
                   const MaskMap& mask, const PixelBox& region) {
  if (rgb.width != depth.width || rgb.height != depth.height ||
      mask.width != depth.width || mask.height != depth.height)
    throw ShapeError("face crop: raster sizes disagree");
  const PixelBox r = region.clipped(depth.width, depth.height);
  if (r.empty()) throw ValueError("face crop: empty region");

  FaceCrop out;
  out.region = r;
  out.to_full = CropTransform{1.0, 1.0, static_cast<double>(r.x0),
                              static_cast<double>(r.y0)};
  out.rgb = RgbImage(r.width(), r.height());
  out.depth = DepthMap(r.width(), r.height());
  out.mask = MaskMap(r.width(), r.height());
  for (int y = r.y0; y < r.y1; ++y) {
    for (int x = r.x0; x < r.x1; ++x) {
      const int cx = x - r.x0, cy = y - r.y0;
      for (int ch = 0; ch < 3; ++ch) out.rgb.at(ch, cx, cy) = rgb.at(ch, x, y);
      if (depth.is_valid(x, y)) out.depth.set(cx, cy, depth.at(x, y));
      out.mask.at(cx, cy) = mask.at(x, y);
    }
  }
  return out;
}

}  // namespace pifield
