#pragma once

#include "pifield/camera.hpp"
#include "pifield/mesh.hpp"
#include "pifield/raster.hpp"

namespace pifield {

// Depth PNG: 16-bit grayscale, millimeters, 0 = hole. Valid depths are
// rounded to the nearest millimeter and clamped to [1, 65535] mm.
void save_depth_png16(const std::string& path, const DepthMap& d);
DepthMap load_depth_png16(const std::string& path);

// Raw float32 raster, little-endian, with a JSON sidecar at path + ".json"
// holding {width, height, units:"m"}. Holes are stored as NaN.
void save_depth_raw(const std::string& path, const DepthMap& d);
DepthMap load_depth_raw(const std::string& path);

// 8-bit grayscale PNG; nonzero = set.
void save_mask_png8(const std::string& path, const MaskMap& m);
MaskMap load_mask_png8(const std::string& path);

// 8-bit RGB PNG; float planes in [0,1] are clamped and quantized.
void save_rgb_png8(const std::string& path, const RgbImage& img);
RgbImage load_rgb_png8(const std::string& path);

// Float raster as raw float32 + sidecar, same layout as depth but without
// hole semantics.
void save_raster_raw(const std::string& path, const RasterF32& r);
RasterF32 load_raster_raw(const std::string& path);

void save_obj(const std::string& path, const Mesh& m);
Mesh load_obj(const std::string& path);

// Binary little-endian PLY: float xyz vertices, uchar-counted int triangle
// faces.
void save_ply(const std::string& path, const Mesh& m);
Mesh load_ply(const std::string& path);

void save_camera_json(const std::string& path, const Camera& cam);
Camera load_camera_json(const std::string& path);

}  // namespace pifield
