#pragma once

#include "pifield/capture.hpp"
#include "pifield/implicit_field.hpp"
#include "pifield/mesh.hpp"

namespace pifield {

// Gaussian falloff rate of the fusion weight in squared meters of depth
// difference.
constexpr double kDefaultBeta = 1e3;
// Erosion ramp width at the face-crop resolution, pixels.
constexpr int kDefaultErodeBand = 8;

// Per-pixel blend weights over the face crop: 0 on and outside the mask
// complement, ramping to 1 a band-width inside, monotone in the distance to
// the mask boundary.
struct ErodedWeightMap {
  RasterF32 w;
  int band = 0;
};

// weight = clamp(dist/band, 0, 1) with dist the exact Euclidean distance
// transform to the mask complement; the raster border counts as complement.
// An empty mask warns and returns all zeros.
ErodedWeightMap erode_weights(const MaskMap& mask, int band = kDefaultErodeBand);

// Geometry the face-to-body blend needs: the face view, its crop frame, the
// refined face depth at crop resolution, and the eroded mask weights.
struct FaceFusionConfig {
  Camera cam;
  PixelBox region;         // face box in full-image pixels
  CropTransform to_full;   // crop pixel -> full-image pixel
  DepthMap depth;          // refined face depth, crop resolution
  ErodedWeightMap weights; // same extents as depth
  double alpha = kFacialAlpha;
  double beta = kDefaultBeta;
  void validate() const;
};

// w = B(weights, x_f) * exp(-beta * P^2) with P = z_f - B(depth, x_f) left
// untruncated; the Gaussian term localizes instead. Depth holes and
// projections behind the camera fall back to 0 (body only).
double fusion_weight(const FaceFusionConfig& f, const Vec3& X);

// Convex blend w*sigma_f + (1-w)*sigma_b.
double fuse(double sigma_b, double sigma_f, double omega);

// Fused field: facial points blend body and face by fusion_weight; all other
// points pass the body value through bit-exactly.
FieldPtr make_fused_field(FieldPtr body, FieldPtr face, FaceFusionConfig cfg);

// Dense occupancy samples at voxel centers: sample (i,j,k) sits at
// bounds.lo + (i+0.5)*voxel, x fastest.
struct OccupancyGrid {
  Box3 bounds;
  int nx = 0, ny = 0, nz = 0;
  std::vector<float> values;

  long idx(int i, int j, int k) const {
    return (static_cast<long>(k) * ny + j) * nx + i;
  }
  float at(int i, int j, int k) const { return values[static_cast<size_t>(idx(i, j, k))]; }
  Vec3 voxel() const {
    const Vec3 e = bounds.extent();
    return {e.x / nx, e.y / ny, e.z / nz};
  }
  Vec3 center(int i, int j, int k) const {
    const Vec3 v = voxel();
    return {bounds.lo.x + (i + 0.5) * v.x, bounds.lo.y + (j + 0.5) * v.y,
            bounds.lo.z + (k + 0.5) * v.z};
  }
  void validate() const;  // resolution >= 2 per axis, values in [0,1]
};

// Queries the field at every voxel center, one z-slab at a time. The result
// is a pure function of the field and the lattice.
OccupancyGrid evaluate_grid(const ImplicitField& field, const Box3& bounds, int nx,
                            int ny, int nz);

// 256-case marching cubes over the voxel-center lattice with linear edge
// interpolation at the iso value. Occupied (>= iso) is inside; triangles
// wind outward. Vertices are welded along shared lattice edges, so the mesh
// is watertight whenever the occupied region stays off the lattice boundary.
// A surface-free grid gives an empty mesh.
Mesh marching_cubes(const OccupancyGrid& grid, double iso = 0.5);

// Depth-map fusion baseline: per-voxel truncated signed distance averaged
// over the views that observe the voxel closer than trunc behind their
// surface. A depth hole is a ray that saw nothing, so it votes free space.
// Occupancy is 0.5*(1 - mean tsdf); voxels no view can explain read 1
// (enclosed space), which keeps surround-rig meshes closed and leaves an
// all-hole capture with no surface inside covered bounds.
OccupancyGrid tsdf_fuse(const std::vector<DepthMap>& depths,
                        const std::vector<Camera>& cameras, const Box3& bounds,
                        double voxel_size, double trunc);

// Raw little-endian float32 volume at path plus a JSON sidecar at
// path + ".json" holding the resolution and bounds.
void save_grid(const std::string& path, const OccupancyGrid& g);
OccupancyGrid load_grid(const std::string& path);

}  // namespace pifield
