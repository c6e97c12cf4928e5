#pragma once

#include <array>
#include <memory>

#include "pifield/capture.hpp"
#include "pifield/feature_net.hpp"
#include "pifield/nn.hpp"
#include "pifield/sampling.hpp"
#include "pifield/scene.hpp"

namespace pifield {

// Truncation band of the per-view depth feature, meters.
constexpr double kDefaultDeltaP = 0.01;
// Finite-difference step for field normals, meters.
constexpr double kNormalStep = 0.002;

// Pixel-aligned depth feature of a 3D point in one view. p is positive
// behind the observed surface.
struct PsdfFeature {
  double z = 0;        // camera-frame depth, meters
  double p = 0;        // clamp(z - sampled depth, +-delta_p)
  bool hole = false;   // no valid depth under the projection, p = +delta_p
  bool valid = false;  // in front of the camera, inside the pixel-center hull
};

PsdfFeature psdf_feature(const Vec3& X, const Camera& cam, const DepthMap& depth_rf,
                         double delta_p = kDefaultDeltaP);

// True when X is in front of cam and projects inside the pixel-center hull,
// the region where bilinear features interpolate rather than extrapolate.
bool point_valid_in_view(const Camera& cam, const Vec3& X);

// Occupancy MLP: leaky-relu hidden layers, sigmoid head. skips lists hidden
// layers whose input gets the MLP input feature re-concatenated.
struct MlpConfig {
  std::vector<int> widths;
  std::vector<int> skips;
  void validate() const;
};
// Width group (1024,512,256) reduces the feature, (128,128,128,128) queries;
// the input feature re-enters at the seam.
MlpConfig body_mlp_config();
// (512,256) then (128,32), input re-concatenated at the seam.
MlpConfig face_mlp_config();
// Small stand-in with the same two-group shape, for tests and toy training.
MlpConfig toy_mlp_config();

struct ImplicitMlp {
  MlpConfig cfg;
  int in_dim = 0;
  std::vector<Dense> layers;  // hidden layers, then the 1-unit head
};
ImplicitMlp make_implicit_mlp(ParamStore& ps, const std::string& prefix, int in_dim,
                              const MlpConfig& cfg, Rng& rng);
// [N,in_dim] -> sigmoid occupancy [N,1].
Var implicit_mlp_forward(const ImplicitMlp& mlp, const Var& feats);

// ---- generic field interface ----

// Occupancy field: query in [0,1] for any finite point. Queries are pure;
// batches may be partitioned arbitrarily with bit-identical results.
class ImplicitField {
 public:
  virtual ~ImplicitField() = default;
  virtual double query(const Vec3& X) const = 0;
  virtual std::vector<double> query_batch(const std::vector<Vec3>& pts) const;
};
using FieldPtr = std::shared_ptr<const ImplicitField>;

// sigmoid(-sharpness * sdf): exactly 0.5 on the surface, ->1 inside.
FieldPtr make_analytic_field(ScenePtr scene, double sharpness = 200.0);

// Trilinear interpolation over an inclusive node lattice (node (0,0,0) at
// bounds.min, node (nx-1,..) at bounds.max, x fastest in values). Exact at
// nodes; queries clamp to the bounds.
FieldPtr make_grid_field(const Box3& bounds, int nx, int ny, int nz,
                         std::vector<float> values);
FieldPtr make_grid_field_from(const ImplicitField& src, const Box3& bounds, int nx,
                              int ny, int nz);

struct FieldNormal {
  Vec3 n{0, 0, 0};  // normalized occupancy gradient: points toward the inside
  bool ok = false;  // false when the central-difference gradient vanishes
};
FieldNormal field_normal(const ImplicitField& f, const Vec3& X, double h = kNormalStep);

// ---- body field assembly ----

struct BodyViewGraph {
  Camera cam;
  std::array<Var, 4> stack;  // finest first; level-s pixel = full pixel / 2^s
  Var d_rf;                  // [1,H,W] refined depth at full resolution
  Tensor depth_valid;        // [1,H,W] 0/1 hole mask for d_rf
};

struct BodyFieldGraph {
  std::vector<BodyViewGraph> views;
  TransformerParams agg;
  ImplicitMlp mlp;
  double delta_p = kDefaultDeltaP;

  int token_dim() const;  // sum of stack channels + (z, p, hole)
  void validate() const;
};

// Occupancy of points valid in every listed view (ValueError otherwise).
// Per view: bilinear stack samples concatenated with [z, p, hole]; the
// transformer aggregates across views, the mean feeds the occupancy MLP.
// Gradients flow into the stacks and d_rf. view_ids empty = all views.
Var query_body_batch(const BodyFieldGraph& g, const std::vector<Vec3>& pts,
                     const std::vector<int>& view_ids = {});

// Inference adapter: per point, views that fail point_valid_in_view drop
// out; a point valid nowhere reads 0 (outside).
FieldPtr make_body_field(BodyFieldGraph g);

// ---- face field assembly ----

// Small single-encoder stand-in for the facial feature extractor: three
// same-resolution convs on [rgb, depth, validity].
struct FaceEncoder {
  Conv2dLayer c1, c2, c3;
};
FaceEncoder make_face_encoder(ParamStore& ps, const std::string& prefix, int width,
                              int out_channels, Rng& rng);
Var face_encode(const FaceEncoder& enc, const Var& rgbdm);

struct FaceFieldGraph {
  Camera cam;                // full-image camera of the face view
  PixelBox region;           // face box in full-image pixels
  CropTransform up_to_full;  // upsampled-crop pixel -> full-image pixel
  Var features;              // [C,uh,uw] encoded upsampled crop
  DepthMap depth_up;         // upsampled masked face depth, feeds p
  DepthMap depth_crop;       // crop-resolution face depth, gates selection
  ImplicitMlp mlp;
  double delta_p = kDefaultDeltaP;
  double alpha = kFacialAlpha;
};

// Upsamples the crop rasters so the corner pixel centers land on the face
// box corners, masks the depth with the upsampled mask, and encodes. The
// upsampled extents must not shrink the crop.
FaceFieldGraph build_face_graph(const FaceEncoder& enc, const ImplicitMlp& mlp,
                                const Camera& cam, const FaceCrop& crop, int up_w,
                                int up_h, double delta_p = kDefaultDeltaP,
                                double alpha = kFacialAlpha);

// Facial point selection on the crop-resolution depth.
bool face_point_selected(const FaceFieldGraph& g, const Vec3& X);

// Occupancy of selected facial points (ValueError when any point fails
// face_point_selected). The depth feature is built on the upsampled masked
// depth and enters as a constant; gradients reach the encoder and MLP only.
Var query_face_batch(const FaceFieldGraph& g, const std::vector<Vec3>& pts);

// Inference adapter; points with a clear selection flag read 0.
FieldPtr make_face_field(FaceFieldGraph g);

// ---- assembly manifest ----

// Everything `reconstruct` needs to rebuild the fields from disk. Paths are
// kept verbatim; callers resolve them relative to the manifest.
struct ManifestView {
  std::string camera, rgb, depth, mask;
};
struct AssemblyManifest {
  std::string checkpoint;
  EncoderConfig encoder;
  int agg_heads = 2, agg_layers = 2, agg_ffn = 2;
  MlpConfig body_mlp, face_mlp;
  int face_enc_width = 16, face_enc_channels = 16;
  double delta_p = kDefaultDeltaP;
  double alpha = kFacialAlpha;
  std::vector<ManifestView> views;
  int face_view = 0;
  std::array<int, 4> face_region{0, 0, 0, 0};  // x0,y0,x1,y1; all zero = none
  std::array<int, 2> face_upsample{0, 0};      // w,h; zero = full image extents

  bool has_face() const {
    return face_region[2] > face_region[0] && face_region[3] > face_region[1];
  }
  void validate() const;
};
void save_manifest(const std::string& path, const AssemblyManifest& m);
AssemblyManifest load_manifest(const std::string& path);

}  // namespace pifield
