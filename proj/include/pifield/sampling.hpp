#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "pifield/camera.hpp"
#include "pifield/mesh.hpp"
#include "pifield/raster.hpp"
#include "pifield/scene.hpp"

namespace pifield {

inline constexpr long kDefaultBodyPoints = 8000;
inline constexpr long kDefaultJointPoints = 5000;  // split 50/50 body/face
inline constexpr double kDefaultBodySigmaNear = 0.05;
inline constexpr double kDefaultFaceSigmaNear = 0.015;
inline constexpr double kFacialAlpha = 0.15;

enum class SampleTag : uint8_t { kBody = 0, kFace = 1 };

struct SampleBatch {
  std::vector<Vec3> points;    // world frame, meters
  std::vector<uint8_t> labels; // ground-truth occupancy
  std::vector<uint8_t> v_f;    // facial flags
  std::vector<uint8_t> s_j;    // depth-jump flags
  SampleTag tag = SampleTag::kBody;
  // Per-view projections, filled by project_batch: proj[view][point].
  std::vector<std::vector<Vec2>> proj;
  std::vector<std::vector<float>> view_depth;
  std::vector<std::vector<uint8_t>> proj_valid;

  long size() const { return static_cast<long>(points.size()); }
  void validate() const;  // all arrays share the point count
};

// Every edge must be shared by exactly two triangles; the failure message
// names the first offending edge.
void require_watertight(const Mesh& m);

// Ground-truth occupancy source: SDF sign test or mesh ray parity.
class OccupancyOracle {
 public:
  explicit OccupancyOracle(ScenePtr scene);
  explicit OccupancyOracle(const Mesh& mesh);  // checks watertightness

  bool occupied(const Vec3& X) const;
  Box3 bounds() const;

 private:
  ScenePtr scene_;
  std::shared_ptr<const Mesh> mesh_;
  std::shared_ptr<const TriBvh> bvh_;
};

// (1-uniform_frac)*n points sampled on the surface (area-weighted) with
// isotropic Normal(0, sigma_near^2) offsets, plus uniform_frac*n points
// uniform in the oracle bounds expanded 10%. Labels come from the oracle.
// Deterministic given (seed, tag): each point owns a fixed counter block.
SampleBatch sample_training_points(const OccupancyOracle& oracle,
                                   const Mesh& surface, long n,
                                   double sigma_near, double uniform_frac,
                                   uint64_t seed,
                                   SampleTag tag = SampleTag::kBody);

// Fills proj/view_depth/proj_valid for every camera.
void project_batch(SampleBatch& batch, const std::vector<Camera>& cameras);

// True iff the frontal projection falls inside face_region and the point's
// frontal depth is within alpha of the bilinearly sampled face depth.
// face_depth is in crop pixels aligned with face_region; holes give false.
bool facial_flag(const Vec3& X, const Camera& front, const DepthMap& face_depth,
                 const PixelBox& face_region, double alpha = kFacialAlpha);

// Sets s_j where more than k views see the point on a flagged jump pixel
// (nearest-pixel sampling; projections outside the raster count as clear).
void mark_sj(SampleBatch& batch, const std::vector<MaskMap>& jump_masks,
             const std::vector<Camera>& cameras, int k = 0);

// Binary container: JSON header line, then xyz f32, label u8, v_f u8, s_j u8.
void save_samples(const std::string& path, const SampleBatch& batch);
SampleBatch load_samples(const std::string& path);

}  // namespace pifield
