#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace elvis::io {

namespace fs = std::filesystem;

/// Raw little-endian float32 array behind a 16-byte header: "EF32" then three
/// uint32 dimensions (unused trailing dimensions are 1).
struct TensorF32 {
  std::array<std::uint32_t, 3> dims{1, 1, 1};
  std::vector<float> data;

  std::size_t count() const { return static_cast<std::size_t>(dims[0]) * dims[1] * dims[2]; }
};

inline constexpr std::string_view kTensorMagic = "EF32";
inline constexpr std::size_t kTensorHeaderBytes = 16;

std::string encode_tensor(const TensorF32& t);
/// Throws RuntimeFailure naming `what` on bad magic or a truncated payload.
TensorF32 decode_tensor(std::string_view bytes, const std::string& what);

void write_tensor(const fs::path& path, const TensorF32& t);
TensorF32 read_tensor(const fs::path& path, const std::string& what);

std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const fs::path& path, std::string_view bytes);

std::uint32_t crc32(std::string_view bytes);

}  // namespace elvis::io
