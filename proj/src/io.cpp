#include "pifield/io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace pifield {

namespace {

// Shared libpng plumbing. Rows are handed over as raw byte pointers; the
// caller owns the pixel buffer layout.
struct PngWriter {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  explicit PngWriter(const std::string& path) {
    fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw IoError("cannot open for write: " + path);
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!info) throw IoError("libpng init failed");
  }
  ~PngWriter() {
    if (png) png_destroy_write_struct(&png, &info);
    if (fp) std::fclose(fp);
  }
};

struct PngReader {
  FILE* fp = nullptr;
  png_structp png = nullptr;
  png_infop info = nullptr;
  explicit PngReader(const std::string& path) {
    fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw IoError("cannot open: " + path);
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png ? png_create_info_struct(png) : nullptr;
    if (!info) throw IoError("libpng init failed");
  }
  ~PngReader() {
    if (png) png_destroy_read_struct(&png, &info, nullptr);
    if (fp) std::fclose(fp);
  }
};

void write_png(const std::string& path, int width, int height, int bit_depth, int color_type,
               const std::vector<png_bytep>& rows) {
  PngWriter w(path);
  if (setjmp(png_jmpbuf(w.png))) throw IoError("png write failed: " + path);
  png_init_io(w.png, w.fp);
  png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height),
               bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  if (bit_depth == 16) png_set_swap(w.png);  // buffers are little-endian
  png_write_image(w.png, const_cast<png_bytepp>(rows.data()));
  png_write_end(w.png, nullptr);
}

void read_png(const std::string& path, int expect_color, int expect_depth, int& width,
              int& height, std::vector<std::vector<png_byte>>& rows) {
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) throw IoError("png read failed: " + path);
  png_init_io(r.png, r.fp);
  png_read_info(r.png, r.info);
  width = static_cast<int>(png_get_image_width(r.png, r.info));
  height = static_cast<int>(png_get_image_height(r.png, r.info));
  if (png_get_color_type(r.png, r.info) != expect_color ||
      png_get_bit_depth(r.png, r.info) != expect_depth)
    throw IoError("unexpected png format: " + path);
  if (expect_depth == 16) png_set_swap(r.png);
  const size_t rowbytes = png_get_rowbytes(r.png, r.info);
  rows.assign(static_cast<size_t>(height), std::vector<png_byte>(rowbytes));
  std::vector<png_bytep> ptrs(static_cast<size_t>(height));
  for (int y = 0; y < height; ++y) ptrs[static_cast<size_t>(y)] = rows[static_cast<size_t>(y)].data();
  png_read_image(r.png, ptrs.data());
}

void write_file_bytes(const std::string& path, const void* data, size_t bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!os) throw IoError("write failed: " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void save_raw_with_sidecar(const std::string& path, int width, int height,
                           const std::vector<float>& data) {
  static_assert(sizeof(float) == 4);
  write_file_bytes(path, data.data(), data.size() * 4);
  nlohmann::json j{{"width", width}, {"height", height}, {"units", "m"}};
  std::ofstream os(path + ".json");
  if (!os) throw IoError("cannot open for write: " + path + ".json");
  os << j.dump(2) << "\n";
}

void load_raw_with_sidecar(const std::string& path, int& width, int& height,
                           std::vector<float>& data) {
  const auto j = nlohmann::json::parse(read_text(path + ".json"));
  width = j.at("width").get<int>();
  height = j.at("height").get<int>();
  if (j.at("units").get<std::string>() != "m") throw IoError("unexpected units in " + path);
  if (width <= 0 || height <= 0) throw IoError("bad extents in sidecar of " + path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  data.resize(static_cast<size_t>(width) * height);
  is.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * 4));
  if (is.gcount() != static_cast<std::streamsize>(data.size() * 4))
    throw IoError("truncated raster payload: " + path);
}

}  // namespace

void save_depth_png16(const std::string& path, const DepthMap& d) {
  std::vector<uint16_t> px(static_cast<size_t>(d.width) * d.height, 0);
  for (size_t i = 0; i < px.size(); ++i) {
    if (!d.valid[i]) continue;
    const long mm = std::lround(static_cast<double>(d.depth[i]) * 1000.0);
    px[i] = static_cast<uint16_t>(std::max(1L, std::min(65535L, mm)));
  }
  std::vector<png_bytep> rows(static_cast<size_t>(d.height));
  for (int y = 0; y < d.height; ++y)
    rows[static_cast<size_t>(y)] =
        reinterpret_cast<png_bytep>(px.data() + static_cast<size_t>(y) * d.width);
  write_png(path, d.width, d.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

DepthMap load_depth_png16(const std::string& path) {
  int w, h;
  std::vector<std::vector<png_byte>> rows;
  read_png(path, PNG_COLOR_TYPE_GRAY, 16, w, h, rows);
  DepthMap d(w, h);
  for (int y = 0; y < h; ++y) {
    const uint16_t* row = reinterpret_cast<const uint16_t*>(rows[static_cast<size_t>(y)].data());
    for (int x = 0; x < w; ++x)
      if (row[x] != 0) d.set(x, y, static_cast<float>(row[x]) / 1000.0f);
  }
  return d;
}

void save_depth_raw(const std::string& path, const DepthMap& d) {
  std::vector<float> data(d.depth.size());
  for (size_t i = 0; i < data.size(); ++i)
    data[i] = d.valid[i] ? d.depth[i] : std::numeric_limits<float>::quiet_NaN();
  save_raw_with_sidecar(path, d.width, d.height, data);
}

DepthMap load_depth_raw(const std::string& path) {
  int w, h;
  std::vector<float> data;
  load_raw_with_sidecar(path, w, h, data);
  DepthMap d(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float v = data[static_cast<size_t>(y) * w + x];
      if (std::isfinite(v) && v > 0.0f) d.set(x, y, v);
    }
  return d;
}

void save_mask_png8(const std::string& path, const MaskMap& m) {
  std::vector<png_byte> px(m.m.size());
  for (size_t i = 0; i < px.size(); ++i) px[i] = m.m[i] ? 255 : 0;
  std::vector<png_bytep> rows(static_cast<size_t>(m.height));
  for (int y = 0; y < m.height; ++y)
    rows[static_cast<size_t>(y)] = px.data() + static_cast<size_t>(y) * m.width;
  write_png(path, m.width, m.height, 8, PNG_COLOR_TYPE_GRAY, rows);
}

MaskMap load_mask_png8(const std::string& path) {
  int w, h;
  std::vector<std::vector<png_byte>> rows;
  read_png(path, PNG_COLOR_TYPE_GRAY, 8, w, h, rows);
  MaskMap m(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      m.at(x, y) = rows[static_cast<size_t>(y)][static_cast<size_t>(x)] ? 1 : 0;
  return m;
}

void save_rgb_png8(const std::string& path, const RgbImage& img) {
  std::vector<png_byte> px(3 * static_cast<size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::max(0.0f, std::min(1.0f, img.at(c, x, y)));
        px[(static_cast<size_t>(y) * img.width + x) * 3 + c] =
            static_cast<png_byte>(std::lround(v * 255.0f));
      }
  std::vector<png_bytep> rows(static_cast<size_t>(img.height));
  for (int y = 0; y < img.height; ++y)
    rows[static_cast<size_t>(y)] = px.data() + static_cast<size_t>(y) * img.width * 3;
  write_png(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

RgbImage load_rgb_png8(const std::string& path) {
  int w, h;
  std::vector<std::vector<png_byte>> rows;
  read_png(path, PNG_COLOR_TYPE_RGB, 8, w, h, rows);
  RgbImage img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(c, x, y) =
            static_cast<float>(rows[static_cast<size_t>(y)][static_cast<size_t>(x) * 3 + c]) /
            255.0f;
  return img;
}

void save_raster_raw(const std::string& path, const RasterF32& r) {
  save_raw_with_sidecar(path, r.width, r.height, r.v);
}

RasterF32 load_raster_raw(const std::string& path) {
  int w, h;
  std::vector<float> data;
  load_raw_with_sidecar(path, w, h, data);
  RasterF32 r(w, h);
  r.v = std::move(data);
  return r;
}

void save_obj(const std::string& path, const Mesh& m) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os.precision(9);
  for (const auto& v : m.vertices) os << "v " << v.x << " " << v.y << " " << v.z << "\n";
  for (const auto& n : m.normals) os << "vn " << n.x << " " << n.y << " " << n.z << "\n";
  const bool with_n = !m.normals.empty();
  for (const auto& t : m.tris) {
    os << "f";
    for (int i : t) {
      os << " " << i + 1;
      if (with_n) os << "//" << i + 1;
    }
    os << "\n";
  }
  if (!os) throw IoError("write failed: " + path);
}

Mesh load_obj(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  Mesh m;
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "v") {
      Vec3 v;
      ls >> v.x >> v.y >> v.z;
      m.vertices.push_back(v);
    } else if (tag == "vn") {
      Vec3 n;
      ls >> n.x >> n.y >> n.z;
      m.normals.push_back(n);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string part;
      while (ls >> part) {
        const size_t slash = part.find('/');
        const int vi = std::stoi(slash == std::string::npos ? part : part.substr(0, slash));
        if (vi <= 0) throw IoError("unsupported obj index in " + path);
        idx.push_back(vi - 1);
      }
      if (idx.size() < 3) throw IoError("short face in " + path);
      // Fan-triangulate polygons.
      for (size_t i = 2; i < idx.size(); ++i) m.tris.push_back({idx[0], idx[i - 1], idx[i]});
    }
  }
  if (!m.normals.empty() && m.normals.size() != m.vertices.size()) m.normals.clear();
  return m;
}

void save_ply(const std::string& path, const Mesh& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os << "ply\nformat binary_little_endian 1.0\n";
  os << "element vertex " << m.vertices.size() << "\n";
  os << "property float x\nproperty float y\nproperty float z\n";
  os << "element face " << m.tris.size() << "\n";
  os << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& v : m.vertices) {
    const float f[3] = {static_cast<float>(v.x), static_cast<float>(v.y),
                        static_cast<float>(v.z)};
    os.write(reinterpret_cast<const char*>(f), 12);
  }
  for (const auto& t : m.tris) {
    const uint8_t n = 3;
    os.write(reinterpret_cast<const char*>(&n), 1);
    const int32_t idx[3] = {t[0], t[1], t[2]};
    os.write(reinterpret_cast<const char*>(idx), 12);
  }
  if (!os) throw IoError("write failed: " + path);
}

Mesh load_ply(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  size_t nv = 0, nf = 0;
  bool in_header = true, fmt_ok = false;
  while (in_header && std::getline(is, line)) {
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "format") {
      std::string f;
      ls >> f;
      fmt_ok = (f == "binary_little_endian");
    } else if (tag == "element") {
      std::string what;
      size_t n;
      ls >> what >> n;
      if (what == "vertex") nv = n;
      else if (what == "face") nf = n;
    } else if (tag == "end_header") {
      in_header = false;
    }
  }
  if (in_header || !fmt_ok) throw IoError("unsupported ply header: " + path);
  Mesh m;
  m.vertices.resize(nv);
  for (size_t i = 0; i < nv; ++i) {
    float f[3];
    if (!is.read(reinterpret_cast<char*>(f), 12)) throw IoError("truncated ply: " + path);
    m.vertices[i] = {f[0], f[1], f[2]};
  }
  m.tris.reserve(nf);
  for (size_t i = 0; i < nf; ++i) {
    uint8_t n;
    if (!is.read(reinterpret_cast<char*>(&n), 1)) throw IoError("truncated ply: " + path);
    std::vector<int32_t> idx(n);
    if (!is.read(reinterpret_cast<char*>(idx.data()), 4L * n))
      throw IoError("truncated ply: " + path);
    for (size_t k = 2; k < idx.size(); ++k) m.tris.push_back({idx[0], idx[k - 1], idx[k]});
  }
  return m;
}

void save_camera_json(const std::string& path, const Camera& cam) {
  nlohmann::json j{{"fx", cam.fx},       {"fy", cam.fy},         {"cx", cam.cx},
                   {"cy", cam.cy},       {"width", cam.width},   {"height", cam.height}};
  j["world_to_cam"] = cam.world_to_cam.m;
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os << j.dump(2) << "\n";
}

Camera load_camera_json(const std::string& path) {
  const auto j = nlohmann::json::parse(read_text(path));
  Camera cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.width = j.at("width").get<int>();
  cam.height = j.at("height").get<int>();
  const auto mm = j.at("world_to_cam");
  if (mm.size() != 16) throw IoError("world_to_cam must have 16 entries: " + path);
  for (int i = 0; i < 16; ++i) cam.world_to_cam.m[static_cast<size_t>(i)] = mm[i].get<double>();
  cam.validate();
  return cam;
}

}  // namespace pifield
