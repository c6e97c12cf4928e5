#include "pifield/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace pifield {

namespace {

constexpr char kMagic[4] = {'P', 'F', 'W', '1'};

void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
      (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  return true;
}

// Floats are stored as their little-endian bit pattern.
void put_f32(std::ostream& os, const float* p, size_t n) {
  static_assert(sizeof(float) == 4);
  for (size_t i = 0; i < n; ++i) {
    uint32_t u;
    std::memcpy(&u, &p[i], 4);
    put_u32(os, u);
  }
}

void get_f32(std::istream& is, float* p, size_t n, const std::string& path) {
  for (size_t i = 0; i < n; ++i) {
    uint32_t u;
    if (!get_u32(is, u)) throw IoError("truncated tensor payload in " + path);
    std::memcpy(&p[i], &u, 4);
  }
}

}  // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& items) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for write: " + path);
  os.write(kMagic, 4);
  for (const auto& [name, t] : items) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u32(os, static_cast<uint32_t>(t.dim(d)));
    put_f32(os, t.data.data(), t.data.size());
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw IoError("not a PFW1 checkpoint: " + path);
  std::vector<std::pair<std::string, Tensor>> out;
  uint32_t name_len;
  while (get_u32(is, name_len)) {
    if (name_len > (1u << 20)) throw IoError("corrupt name length in " + path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw IoError("truncated name in " + path);
    uint32_t rank;
    if (!get_u32(is, rank) || rank > 8) throw IoError("corrupt rank in " + path);
    std::vector<int> shape;
    long numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      uint32_t e;
      if (!get_u32(is, e) || e == 0) throw IoError("corrupt extent in " + path);
      shape.push_back(static_cast<int>(e));
      numel *= e;
    }
    Tensor t(rank == 0 ? std::vector<int>{1} : shape);
    if (rank == 0) numel = 1;
    get_f32(is, t.data.data(), static_cast<size_t>(numel), path);
    if (rank == 0) t.shape = {1};
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

std::map<std::string, Tensor> load_tensor_map(const std::string& path) {
  std::map<std::string, Tensor> out;
  for (auto& [name, t] : load_tensors(path)) out.emplace(std::move(name), std::move(t));
  return out;
}

}  // namespace pifield
