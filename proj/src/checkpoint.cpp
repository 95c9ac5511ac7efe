#include "ssreg/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "ssreg/common.hpp"

namespace ssreg {

namespace {

constexpr char kMagic[5] = {'S', 'S', 'R', 'E', 'G'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ofstream& f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (!f) throw DataError("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f32(std::ofstream& f, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(f, bits);
}

float get_f32(std::ifstream& f) {
  const std::uint32_t bits = get_u32(f);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

void save_checkpoint(const ParamStore<float>& params, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("save_checkpoint: cannot open " + path.string());
  f.write(kMagic, 5);
  put_u32(f, kVersion);
  put_u32(f, static_cast<std::uint32_t>(params.arrays.size()));
  for (const auto& a : params.arrays) {
    put_u32(f, static_cast<std::uint32_t>(a.name.size()));
    f.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    put_u32(f, static_cast<std::uint32_t>(a.dims.size()));
    for (int d : a.dims) put_u32(f, static_cast<std::uint32_t>(d));
    for (Eigen::Index i = 0; i < a.size(); ++i) put_f32(f, a.values[i]);
  }
  if (!f) throw DataError("save_checkpoint: write failed for " + path.string());
}

ParamStore<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("load_checkpoint: cannot open " + path.string());
  char magic[5];
  f.read(magic, 5);
  if (!f || std::memcmp(magic, kMagic, 5) != 0)
    throw DataError("load_checkpoint: bad magic in " + path.string());
  if (get_u32(f) != kVersion)
    throw DataError("load_checkpoint: unsupported version in " + path.string());
  const std::uint32_t count = get_u32(f);
  ParamStore<float> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = get_u32(f);
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    const std::uint32_t ndims = get_u32(f);
    std::vector<int> dims(ndims);
    for (auto& d : dims) d = static_cast<int>(get_u32(f));
    auto& arr = out.add(std::move(name), std::move(dims));
    for (Eigen::Index j = 0; j < arr.size(); ++j) arr.values[j] = get_f32(f);
  }
  if (!f) throw DataError("load_checkpoint: truncated file " + path.string());
  return out;
}

void save_sidecar(const std::map<std::string, std::string>& fields,
                  const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw DataError("save_sidecar: cannot open " + path.string());
  for (const auto& [k, v] : fields) f << k << "=" << v << "\n";
}

std::map<std::string, std::string> load_sidecar(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("load_sidecar: cannot open " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("load_sidecar: malformed line: " + line);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace ssreg
