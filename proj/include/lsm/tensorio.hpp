#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "lsm/geometry.hpp"
#include "lsm/raster.hpp"

namespace lsm::io {

enum class DType : std::uint8_t { kFloat32 = 1, kUInt8 = 2 };

inline constexpr char kTensorMagic[4] = {'L', 'S', 'M', 'T'};
inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::size_t kMaxRank = 8;

/// Decoded tensor file. Exactly one of `f32` / `u8` is populated.
struct TensorFile {
  std::vector<std::uint32_t> dims;
  DType dtype = DType::kFloat32;
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::size_t element_count() const;
};

// Byte layout (little-endian):
//   0  magic "LSMT"
//   4  u16 version (1)
//   6  u8  dtype (1 = f32, 2 = u8)
//   7  u8  rank (1..8)
//   8  rank x u32 dims
//   .. row-major payload
std::vector<std::uint8_t> encode_tensor(std::span<const std::uint32_t> dims,
                                        std::span<const float> values);
std::vector<std::uint8_t> encode_tensor(std::span<const std::uint32_t> dims,
                                        std::span<const std::uint8_t> values);
/// Throws ParseError naming the field and byte offset on malformed input.
TensorFile decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path,
                  std::span<const std::uint32_t> dims,
                  std::span<const float> values);
void write_tensor(const std::filesystem::path& path,
                  std::span<const std::uint32_t> dims,
                  std::span<const std::uint8_t> values);
TensorFile read_tensor(const std::filesystem::path& path);

// Convenience conversions between rasters and float32 tensor files.
void write_feature_map(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_feature_map(const std::filesystem::path& path);
void write_grid(const std::filesystem::path& path, const FeatureGrid& grid);
/// Reads a V^3 (x C) tensor as a grid over `spec` (resolution taken from the file).
FeatureGrid read_grid(const std::filesystem::path& path,
                      VoxelGridSpec spec = VoxelGridSpec{});

/// One camera per line: fx fy cx cy width height r00..r22 t0 t1 t2.
std::string format_cameras(const std::vector<Camera>& cameras);
std::vector<Camera> parse_cameras(const std::string& text);
void write_cameras(const std::filesystem::path& path,
                   const std::vector<Camera>& cameras);
std::vector<Camera> read_cameras(const std::filesystem::path& path);

struct Rgb8 {
  std::uint8_t r = 0, g = 0, b = 0;
};

/// ASCII PLY. `colors` is either empty or the same length as `points`.
void export_ply(const std::filesystem::path& path, std::span<const Vec3> points,
                std::span<const Rgb8> colors = {});
std::string format_ply(std::span<const Vec3> points,
                       std::span<const Rgb8> colors = {});

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace lsm::io
