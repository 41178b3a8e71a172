#include "msst/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace msst {

namespace {

constexpr char k_magic[4] = {'M', 'S', 'S', 'T'};
constexpr std::uint32_t k_format_version = 1;

void write_u32(std::ostream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                         static_cast<char>((v >> 16) & 0xff),
                         static_cast<char>((v >> 24) & 0xff)};
  out.write(bytes, 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& path) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4))
    throw std::runtime_error("load_checkpoint: " + path + ": truncated file");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) |
         (static_cast<std::uint32_t>(bytes[3]) << 24);
}

void write_f32(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(out, bits);
}

float read_f32(std::istream& in, const std::string& path) {
  const std::uint32_t bits = read_u32(in, path);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

} // namespace

void save_checkpoint(const std::string& path, const ParameterStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out.write(k_magic, 4);
  write_u32(out, k_format_version);
  for (const auto& name : store.names()) {
    const Tensor& t = store.get(name);
    write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    for (double v : t.values()) write_f32(out, static_cast<float>(v));
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

void load_checkpoint(const std::string& path, ParameterStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, k_magic, 4) != 0)
    throw std::runtime_error("load_checkpoint: " + path + ": bad magic bytes");
  const std::uint32_t version = read_u32(in, path);
  if (version != k_format_version)
    throw std::runtime_error("load_checkpoint: " + path + ": unsupported format version " +
                             std::to_string(version));
  for (const auto& expected : store.names()) {
    const std::uint32_t name_len = read_u32(in, path);
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len))
      throw std::runtime_error("load_checkpoint: " + path + ": truncated file");
    if (name != expected)
      throw std::runtime_error("load_checkpoint: " + path + ": parameter '" + name +
                               "' where '" + expected + "' was expected");
    Tensor& t = store.get(name);
    const std::uint32_t rank = read_u32(in, path);
    if (rank != static_cast<std::uint32_t>(t.rank()))
      throw std::runtime_error("load_checkpoint: " + path + ": '" + name + "' has rank " +
                               std::to_string(rank) + ", expected " +
                               std::to_string(t.rank()));
    for (int i = 0; i < t.rank(); ++i) {
      const std::uint32_t d = read_u32(in, path);
      if (d != static_cast<std::uint32_t>(t.dim(i)))
        throw std::runtime_error("load_checkpoint: " + path + ": '" + name +
                                 "' dim " + std::to_string(i) + " is " + std::to_string(d) +
                                 ", expected " + std::to_string(t.dim(i)));
    }
    for (double& v : t.values()) v = static_cast<double>(read_f32(in, path));
  }
  // any trailing bytes mean the file does not match this model
  char extra;
  if (in.read(&extra, 1))
    throw std::runtime_error("load_checkpoint: " + path + ": trailing data after last parameter");
}

} // namespace msst
