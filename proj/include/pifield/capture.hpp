#pragma once

#include <cstdint>
#include <vector>

#include "pifield/camera.hpp"
#include "pifield/mesh.hpp"
#include "pifield/raster.hpp"
#include "pifield/scene.hpp"

namespace pifield {

struct RigConfig {
  double radius_m = 1.8;
  double height_m = 0.0;  // eye height above the look-at target
  int image_size = 512;
  double fov_deg = 60.0;  // vertical field of view
  std::vector<double> azimuths_deg{0.0, 135.0, -135.0};
  Vec3 target{0.0, 0.0, 0.0};
};

// Cameras on a circle of radius_m around target, all looking at it.
// Azimuth 0 is the frontal view on -z; positive azimuths swing toward +x.
std::vector<Camera> make_rig(const RigConfig& cfg);

struct ViewRender {
  DepthMap depth;  // first-hit camera depth; misses stay holes
  MaskMap mask;    // hit indicator, equal to the valid-depth support
  RgbImage rgb;    // grey Lambertian headlight shading
};

// Ray-cast render. The mesh path intersects triangles through the BVH; the
// SDF path sphere-traces (max 256 steps, surface tolerance 1e-4 m).
// Parallel over scanlines.
ViewRender render_view(const Mesh& mesh, const TriBvh& bvh, const Camera& cam);
ViewRender render_view(const SceneSdf& scene, const Camera& cam);

struct NoiseModel {
  double sigma_base = 0.0;       // meters at 1 m depth
  double depth_coeff = 0.0;      // 1/m^2, quadratic growth away from 1 m
  double dropout_rate = 0.3;     // hole probability inside the jump band
  double jump_threshold = 0.06;  // meters of 3x3 depth range defining the band
  uint64_t seed = 0;

  void validate() const;
};

// Per-pixel axial noise n ~ Normal(0, sigma(d)^2) with
// sigma(d) = sigma_base * (1 + depth_coeff * (d-1)^2), plus hole dropout
// restricted to the depth-jump band. One counter stream per view index, so
// the result is a pure function of (seed, view_index, pixel).
DepthMap add_noise(const DepthMap& gt, const NoiseModel& model, int view_index);

// 1 where the 3x3 neighborhood spans more than th meters of valid depth or
// touches a hole. Border neighborhoods clip to the raster.
MaskMap depth_jump_mask(const DepthMap& depth, double th = 0.06);

struct CropTransform {
  double sx = 1.0, sy = 1.0, ox = 0.0, oy = 0.0;
  Vec2 to_full(const Vec2& crop) const {
    return {crop.x * sx + ox, crop.y * sy + oy};
  }
  Vec2 to_crop(const Vec2& full) const {
    return {(full.x - ox) / sx, (full.y - oy) / sy};
  }
};

struct FaceCrop {
  RgbImage rgb;
  DepthMap depth;
  MaskMap mask;
  PixelBox region;        // face region in full-image pixels
  CropTransform to_full;  // crop pixel -> full-image pixel
};

// Pixel hull of the projected corners of a world-space box. Contains every
// projected point of the box (perspective keeps the box convex). Corners
// behind the camera are rejected.
PixelBox project_face_box(const Camera& cam, const Box3& box);

// Crops all three rasters to region clipped to the raster; empty clipped
// region is rejected.
FaceCrop face_crop(const RgbImage& rgb, const DepthMap& depth,
                   const MaskMap& mask, const PixelBox& region);

}  // namespace pifield
