#include "pgfa/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pgfa::train {
namespace {

constexpr char kMagic[8] = {'P', 'G', 'F', 'A', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

}  // namespace

void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    write_u32(os, static_cast<uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    const uint8_t ndim = static_cast<uint8_t>(a.tensor.ndim());
    os.write(reinterpret_cast<const char*>(&ndim), 1);
    for (int d : a.tensor.shape) write_u32(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(a.tensor.ptr()),
             static_cast<std::streamsize>(sizeof(float) * a.tensor.data.size()));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed: " + path);
}

std::vector<NamedArray> load_arrays(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open: " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint32_t version = read_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version in " + path);
  const uint32_t count = read_u32(is);
  std::vector<NamedArray> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint8_t ndim = 0;
    is.read(reinterpret_cast<char*>(&ndim), 1);
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    Tensor<float> t(shape);
    is.read(reinterpret_cast<char*>(t.ptr()),
            static_cast<std::streamsize>(sizeof(float) * t.data.size()));
    if (!is) throw std::runtime_error("checkpoint: truncated file: " + path);
    out.push_back({std::move(name), std::move(t)});
  }
  return out;
}

std::map<std::string, Tensor<float>> load_array_map(const std::string& path) {
  std::map<std::string, Tensor<float>> m;
  for (auto& a : load_arrays(path)) m.emplace(std::move(a.name), std::move(a.tensor));
  return m;
}

}  // namespace pgfa::train
