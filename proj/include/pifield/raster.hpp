#pragma once

#include <cstdint>

#include "pifield/camera.hpp"

namespace pifield {

// Single-channel float raster, row-major, integer coordinates at pixel
// centers.
struct RasterF32 {
  int width = 0, height = 0;
  std::vector<float> v;

  RasterF32() = default;
  RasterF32(int w, int h, float fill = 0.0f)
      : width(w), height(h), v(static_cast<size_t>(w) * h, fill) {
    if (w <= 0 || h <= 0) throw ShapeError("raster: non-positive extents");
  }
  float& at(int x, int y) { return v[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return v[static_cast<size_t>(y) * width + x]; }
  bool inside(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
};

// Border-clamped bilinear interpolation.
double bilinear_sample(const RasterF32& r, const Vec2& p);

struct MaskMap {
  int width = 0, height = 0;
  std::vector<uint8_t> m;

  MaskMap() = default;
  MaskMap(int w, int h, uint8_t fill = 0)
      : width(w), height(h), m(static_cast<size_t>(w) * h, fill) {}
  uint8_t& at(int x, int y) { return m[static_cast<size_t>(y) * width + x]; }
  uint8_t at(int x, int y) const { return m[static_cast<size_t>(y) * width + x]; }
};

// Depth in meters with explicit validity bits; a zero bit is a hole, and the
// depth value under a hole is meaningless.
struct DepthMap {
  int width = 0, height = 0;
  std::vector<float> depth;
  std::vector<uint8_t> valid;

  DepthMap() = default;
  DepthMap(int w, int h)
      : width(w),
        height(h),
        depth(static_cast<size_t>(w) * h, 0.0f),
        valid(static_cast<size_t>(w) * h, 0) {
    if (w <= 0 || h <= 0) throw ShapeError("depth map: non-positive extents");
  }
  float& at(int x, int y) { return depth[static_cast<size_t>(y) * width + x]; }
  float at(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
  bool is_valid(int x, int y) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
  void set(int x, int y, float d) {
    depth[static_cast<size_t>(y) * width + x] = d;
    valid[static_cast<size_t>(y) * width + x] = 1;
  }
  MaskMap mask() const {
    MaskMap mm(width, height);
    mm.m.assign(valid.begin(), valid.end());
    return mm;
  }

  // Bilinear over the valid corners with renormalized weights; *ok=false
  // when all four are holes.
  double sample(const Vec2& p, bool* ok) const;
  // Value of the nearest pixel, ignoring validity (callers check separately).
  float nearest(const Vec2& p) const;
};

// Planar float RGB in [0,1], layout [3][H][W] so it maps onto a tensor
// directly.
struct RgbImage {
  int width = 0, height = 0;
  std::vector<float> planes;

  RgbImage() = default;
  RgbImage(int w, int h)
      : width(w), height(h), planes(3 * static_cast<size_t>(w) * h, 0.0f) {}
  float& at(int c, int x, int y) {
    return planes[(static_cast<size_t>(c) * height + y) * width + x];
  }
  float at(int c, int x, int y) const {
    return planes[(static_cast<size_t>(c) * height + y) * width + x];
  }
};

struct NormalMap {
  int width = 0, height = 0;
  std::vector<float> n;  // [3][H][W], camera frame, unit where valid
  std::vector<uint8_t> valid;

  NormalMap() = default;
  NormalMap(int w, int h)
      : width(w),
        height(h),
        n(3 * static_cast<size_t>(w) * h, 0.0f),
        valid(static_cast<size_t>(w) * h, 0) {}
  Vec3 at(int x, int y) const {
    const size_t hw = static_cast<size_t>(width) * height, i = static_cast<size_t>(y) * width + x;
    return {n[i], n[hw + i], n[2 * hw + i]};
  }
  void set(int x, int y, const Vec3& v) {
    const size_t hw = static_cast<size_t>(width) * height, i = static_cast<size_t>(y) * width + x;
    n[i] = static_cast<float>(v.x);
    n[hw + i] = static_cast<float>(v.y);
    n[2 * hw + i] = static_cast<float>(v.z);
    valid[i] = 1;
  }
  bool is_valid(int x, int y) const { return valid[static_cast<size_t>(y) * width + x] != 0; }
};

// Per-pixel camera-frame normals from central-difference tangents of the
// back-projected depth. A pixel is invalid when any of its four stencil
// neighbors is a hole or off-raster. Fronto-parallel surfaces map to
// (0,0,-1), toward the camera.
NormalMap normals_from_depth(const DepthMap& d, const Camera& cam);

// Bilinear resampling with corner pixel centers pinned to corner pixel
// centers. Output extents must be >= 1; source extents >= 2 on any axis
// that actually resamples. Depth holes drop out with renormalized weights
// and a pixel with no valid support stays a hole; masks threshold at 0.5.
RgbImage resample_rgb(const RgbImage& src, int out_w, int out_h);
DepthMap resample_depth(const DepthMap& src, int out_w, int out_h);
MaskMap resample_mask(const MaskMap& src, int out_w, int out_h);

}  // namespace pifield
