#pragma once

#include <string>
#include <utility>

#include "pifield/implicit_field.hpp"
#include "pifield/mesh.hpp"

namespace pifield {

// Bundle of reconstruction metrics. Distances are centimeters; normal_l2 is
// reported in units of 1e-1 and normal_cosine in units of 1e-3; depth_l1 is
// meters; iou is a fraction.
struct MetricReport {
  double p2s_cm = 0.0;
  double chamfer_cm = 0.0;
  double normal_l2 = 0.0;
  double normal_cosine = 0.0;
  double depth_l1 = 0.0;
  double iou = 0.0;
  void validate() const;  // finite, distances and iou nonnegative, iou <= 1
};

std::string metric_json(const MetricReport& r);
std::string metric_csv_header();
std::string metric_csv_row(const std::string& label, const MetricReport& r);

// n area-uniform surface samples; optional matching unit face normals.
// Deterministic in seed. Empty or zero-area mesh is an error.
std::vector<Vec3> sample_surface(const Mesh& m, long n, uint64_t seed,
                                 std::vector<Vec3>* normals = nullptr);

// {chamfer, p2s}, both centimeters. P2S is the mean distance of samples on
// pred to the gt surface; chamfer symmetrizes with the reverse direction and
// is bit-exact under swapping the meshes.
std::pair<double, double> chamfer_and_p2s(const Mesh& pred, const Mesh& gt,
                                          long n_samples = 10000, uint64_t seed = 0);

// {mean ||n_p - n_g||^2, mean (1 - n_p . n_g)} over samples on pred paired
// with the normal of the nearest gt triangle. Raw values; the report scales.
std::pair<double, double> normal_metrics(const Mesh& pred, const Mesh& gt,
                                         long n_samples = 10000, uint64_t seed = 0);

// Monte-Carlo IoU of the occupied sets {sigma > 0.5} over bounds. An empty
// union counts as perfect agreement (1.0). Deterministic in seed.
double volumetric_iou(const ImplicitField& a, const ImplicitField& b, const Box3& bounds,
                      long n_samples = 100000, uint64_t seed = 0);

// Mean absolute depth difference over pixels valid in both maps, meters.
// No co-valid pixels gives 0 with a warning.
double depth_l1(const DepthMap& pred, const DepthMap& gt);

}  // namespace pifield
