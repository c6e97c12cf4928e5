#pragma once

#include "pifield/common.hpp"

namespace pifield {

// Pinhole camera. Frame convention: right-handed, +z into the scene, camera
// y roughly along world up (pixel v grows with camera y). Integer pixel
// coordinates are pixel centers.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  int width = 0, height = 0;
  Mat4 world_to_cam = Mat4::identity();

  struct Projection {
    Vec2 pix;
    double z = 0;  // camera-space depth in meters
    bool valid = false;
  };

  // Behind-camera points come back invalid rather than throwing: samplers
  // probe free space all the time.
  Projection project(const Vec3& X) const {
    const Vec3 c = world_to_cam.transform_point(X);
    Projection p;
    if (c.z <= 1e-6) return p;
    p.pix = {fx * c.x / c.z + cx, fy * c.y / c.z + cy};
    p.z = c.z;
    p.valid = true;
    return p;
  }

  Vec3 back_project(const Vec2& pix, double z) const {
    const Vec3 cam{(pix.x - cx) / fx * z, (pix.y - cy) / fy * z, z};
    return world_to_cam.rigid_inverse().transform_point(cam);
  }

  Vec3 cam_point(const Vec2& pix, double z) const {
    return {(pix.x - cx) / fx * z, (pix.y - cy) / fy * z, z};
  }

  Vec3 position() const { return world_to_cam.rigid_inverse().transform_point({0, 0, 0}); }

  // Pixel ray in world space; direction scaled so that t equals camera
  // depth, not Euclidean distance.
  void pixel_ray(const Vec2& pix, Vec3& origin, Vec3& dir) const {
    const Mat4 c2w = world_to_cam.rigid_inverse();
    origin = c2w.transform_point({0, 0, 0});
    const Vec3 d_cam{(pix.x - cx) / fx, (pix.y - cy) / fy, 1.0};
    dir = c2w.transform_point(d_cam) - origin;
  }

  void validate() const;

  static Camera look_at(double fx, double fy, double cx, double cy, int width, int height,
                        const Vec3& eye, const Vec3& target, const Vec3& up);
};

}  // namespace pifield
