#include "elvis/io.hpp"

#include "elvis/core/types.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace elvis::io {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

std::string encode_tensor(const TensorF32& t) {
  if (t.data.size() != t.count()) throw ContractError("encode_tensor: data size does not match dims");
  std::string out(kTensorHeaderBytes + t.data.size() * sizeof(float), '\0');
  std::memcpy(out.data(), kTensorMagic.data(), 4);
  std::memcpy(out.data() + 4, t.dims.data(), 12);
  if (!t.data.empty()) std::memcpy(out.data() + kTensorHeaderBytes, t.data.data(), t.data.size() * sizeof(float));
  return out;
}

TensorF32 decode_tensor(std::string_view bytes, const std::string& what) {
  if (bytes.size() < kTensorHeaderBytes || bytes.substr(0, 4) != kTensorMagic)
    throw RuntimeFailure(what + ": missing or corrupt tensor header");
  TensorF32 t;
  std::memcpy(t.dims.data(), bytes.data() + 4, 12);
  const std::size_t expected = kTensorHeaderBytes + t.count() * sizeof(float);
  if (bytes.size() != expected)
    throw RuntimeFailure(what + ": truncated tensor file (expected " + std::to_string(expected) + " bytes, found " +
                         std::to_string(bytes.size()) + ")");
  t.data.resize(t.count());
  if (!t.data.empty()) std::memcpy(t.data.data(), bytes.data() + kTensorHeaderBytes, t.count() * sizeof(float));
  return t;
}

void write_tensor(const fs::path& path, const TensorF32& t) { write_file_atomic(path, encode_tensor(t)); }

TensorF32 read_tensor(const fs::path& path, const std::string& what) { return decode_tensor(read_file(path), what); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw RuntimeFailure("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw RuntimeFailure("short write to " + path.string());
  }
  fs::rename(tmp, path);
}

std::uint32_t crc32(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace elvis::io
