#include "pifield/raster.hpp"

#include <cmath>

namespace pifield {

namespace {
struct Corner {
  int x, y;
  double w;
};
void corners_of(const Vec2& p, int W, int H, Corner c[4]) {
  const double fx0 = std::floor(p.x), fy0 = std::floor(p.y);
  const double ax = p.x - fx0, ay = p.y - fy0;
  const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
  auto cl = [](int i, int n) { return std::max(0, std::min(n - 1, i)); };
  c[0] = {cl(x0, W), cl(y0, H), (1 - ax) * (1 - ay)};
  c[1] = {cl(x0 + 1, W), cl(y0, H), ax * (1 - ay)};
  c[2] = {cl(x0, W), cl(y0 + 1, H), (1 - ax) * ay};
  c[3] = {cl(x0 + 1, W), cl(y0 + 1, H), ax * ay};
}
}  // namespace

double bilinear_sample(const RasterF32& r, const Vec2& p) {
  if (r.width <= 0 || r.height <= 0) throw ValueError("bilinear_sample: empty raster");
  Corner cs[4];
  corners_of(p, r.width, r.height, cs);
  double s = 0;
  for (const auto& c : cs) s += c.w * r.at(c.x, c.y);
  return s;
}

double DepthMap::sample(const Vec2& p, bool* ok) const {
  Corner cs[4];
  corners_of(p, width, height, cs);
  double wsum = 0, s = 0;
  for (const auto& c : cs) {
    if (!is_valid(c.x, c.y)) continue;
    wsum += c.w;
    s += c.w * at(c.x, c.y);
  }
  if (wsum <= 1e-12) {
    if (ok) *ok = false;
    return 0.0;
  }
  if (ok) *ok = true;
  return s / wsum;
}

float DepthMap::nearest(const Vec2& p) const {
  const int x = std::max(0, std::min(width - 1, static_cast<int>(std::lround(p.x))));
  const int y = std::max(0, std::min(height - 1, static_cast<int>(std::lround(p.y))));
  return at(x, y);
}

NormalMap normals_from_depth(const DepthMap& d, const Camera& cam) {
  NormalMap out(d.width, d.height);
  for (int y = 0; y < d.height; ++y)
    for (int x = 0; x < d.width; ++x) {
      if (x < 1 || y < 1 || x + 1 >= d.width || y + 1 >= d.height) continue;
      if (!d.is_valid(x - 1, y) || !d.is_valid(x + 1, y) || !d.is_valid(x, y - 1) ||
          !d.is_valid(x, y + 1))
        continue;
      const Vec3 px0 = cam.cam_point({static_cast<double>(x - 1), static_cast<double>(y)},
                                     d.at(x - 1, y));
      const Vec3 px1 = cam.cam_point({static_cast<double>(x + 1), static_cast<double>(y)},
                                     d.at(x + 1, y));
      const Vec3 py0 = cam.cam_point({static_cast<double>(x), static_cast<double>(y - 1)},
                                     d.at(x, y - 1));
      const Vec3 py1 = cam.cam_point({static_cast<double>(x), static_cast<double>(y + 1)},
                                     d.at(x, y + 1));
      const Vec3 cr = cross(py1 - py0, px1 - px0);
      const double len = norm(cr);
      if (len < 1e-12) continue;
      out.set(x, y, cr / len);
    }
  return out;
}

namespace {

// Corner-pinned source coordinate for output index i; an axis of extent 1
// maps to source 0.
double resample_coord(int i, int out_n, int src_n) {
  if (out_n <= 1) return 0.0;
  return static_cast<double>(i) * (src_n - 1) / (out_n - 1);
}

void check_resample(int src_w, int src_h, int out_w, int out_h, const char* what) {
  if (out_w < 1 || out_h < 1) throw ShapeError(std::string(what) + ": non-positive output");
  if ((out_w != src_w && src_w < 2) || (out_h != src_h && src_h < 2))
    throw ShapeError(std::string(what) + ": source too small to resample");
}

}  // namespace

RgbImage resample_rgb(const RgbImage& src, int out_w, int out_h) {
  check_resample(src.width, src.height, out_w, out_h, "resample_rgb");
  RgbImage out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const double sy = resample_coord(y, out_h, src.height);
    const int y0 = std::min(static_cast<int>(sy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = resample_coord(x, out_w, src.width);
      const int x0 = std::min(static_cast<int>(sx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double fx = sx - x0;
      for (int c = 0; c < 3; ++c) {
        const double v = (1 - fy) * ((1 - fx) * src.at(c, x0, y0) + fx * src.at(c, x1, y0)) +
                         fy * ((1 - fx) * src.at(c, x0, y1) + fx * src.at(c, x1, y1));
        out.at(c, x, y) = static_cast<float>(v);
      }
    }
  }
  return out;
}

DepthMap resample_depth(const DepthMap& src, int out_w, int out_h) {
  check_resample(src.width, src.height, out_w, out_h, "resample_depth");
  DepthMap out(out_w, out_h);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      bool ok = false;
      const double v = src.sample({resample_coord(x, out_w, src.width),
                                   resample_coord(y, out_h, src.height)},
                                  &ok);
      if (ok) out.set(x, y, static_cast<float>(v));
    }
  return out;
}

MaskMap resample_mask(const MaskMap& src, int out_w, int out_h) {
  check_resample(src.width, src.height, out_w, out_h, "resample_mask");
  MaskMap out(out_w, out_h);
  for (int y = 0; y < out_h; ++y) {
    const double sy = resample_coord(y, out_h, src.height);
    const int y0 = std::min(static_cast<int>(sy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = sy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double sx = resample_coord(x, out_w, src.width);
      const int x0 = std::min(static_cast<int>(sx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double fx = sx - x0;
      const double v = (1 - fy) * ((1 - fx) * src.at(x0, y0) + fx * src.at(x1, y0)) +
                       fy * ((1 - fx) * src.at(x0, y1) + fx * src.at(x1, y1));
      if (v >= 0.5) out.at(x, y) = 1;
    }
  }
  return out;
}

}  // namespace pifield
