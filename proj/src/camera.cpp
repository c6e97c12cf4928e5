#include "pifield/camera.hpp"

#include <cmath>

namespace pifield {

void Camera::validate() const {
  if (fx <= 0 || fy <= 0) throw ValueError("camera: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ValueError("camera: empty raster");
  if (cx < 0 || cx >= width || cy < 0 || cy >= height)
    throw ValueError("camera: principal point outside raster");
  // Orthonormality of the rotation block.
  double worst = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double dot = 0;
      for (int k = 0; k < 3; ++k) dot += world_to_cam.at(k, i) * world_to_cam.at(k, j);
      worst = std::max(worst, std::fabs(dot - (i == j ? 1.0 : 0.0)));
    }
  if (worst >= 1e-5) throw ValueError("camera: rotation block not orthonormal");
}

Camera Camera::look_at(double fx, double fy, double cx, double cy, int width, int height,
                       const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 z = normalized(target - eye);
  const Vec3 xr = cross(up, z);
  if (norm(xr) < 1e-9) throw ValueError("camera look_at: view direction parallel to up");
  const Vec3 x = normalized(xr);
  const Vec3 y = cross(z, x);
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = cx;
  cam.cy = cy;
  cam.width = width;
  cam.height = height;
  Mat4 m = Mat4::identity();  // rows are the camera axes; translation brings eye to origin
  const Vec3 axes[3] = {x, y, z};
  for (int r = 0; r < 3; ++r) {
    m.at(r, 0) = axes[r].x;
    m.at(r, 1) = axes[r].y;
    m.at(r, 2) = axes[r].z;
    m.at(r, 3) = -dot(axes[r], eye);
  }
  cam.world_to_cam = m;
  cam.validate();
  return cam;
}

}  // namespace pifield
