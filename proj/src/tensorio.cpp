#include "lsm/tensorio.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "lsm/error.hpp"

namespace lsm::io {
namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 0; s < 32; s += 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 |
         std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
}

std::size_t checked_count(std::span<const std::uint32_t> dims) {
  if (dims.empty()) throw InvalidArgument("tensor: rank must be >= 1");
  if (dims.size() > kMaxRank) throw InvalidArgument("tensor: rank must be <= 8");
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> header(std::span<const std::uint32_t> dims, DType dtype) {
  std::vector<std::uint8_t> out(kTensorMagic, kTensorMagic + 4);
  put_u16(out, kTensorVersion);
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) put_u32(out, d);
  return out;
}

std::string fmt17(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::size_t TensorFile::element_count() const {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::vector<std::uint8_t> encode_tensor(std::span<const std::uint32_t> dims,
                                        std::span<const float> values) {
  if (checked_count(dims) != values.size()) {
    throw InvalidArgument("tensor: value count does not match dims");
  }
  auto out = header(dims, DType::kFloat32);
  out.reserve(out.size() + 4 * values.size());
  for (float f : values) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

std::vector<std::uint8_t> encode_tensor(std::span<const std::uint32_t> dims,
                                        std::span<const std::uint8_t> values) {
  if (checked_count(dims) != values.size()) {
    throw InvalidArgument("tensor: value count does not match dims");
  }
  auto out = header(dims, DType::kUInt8);
  out.insert(out.end(), values.begin(), values.end());
  return out;
}

TensorFile decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    throw ParseError("magic", 0, "bad magic at offset 0");
  }
  if (bytes.size() < 6) throw ParseError("version", 4, "truncated version at offset 4");
  const std::uint16_t version =
      static_cast<std::uint16_t>(bytes[4] | (bytes[5] << 8));
  if (version != kTensorVersion) {
    throw ParseError("version", 4,
                     "unsupported version " + std::to_string(version) + " at offset 4");
  }
  if (bytes.size() < 8) throw ParseError("dtype", 6, "truncated header at offset 6");
  TensorFile t;
  if (bytes[6] == 1) {
    t.dtype = DType::kFloat32;
  } else if (bytes[6] == 2) {
    t.dtype = DType::kUInt8;
  } else {
    throw ParseError("dtype", 6,
                     "bad dtype " + std::to_string(bytes[6]) + " at offset 6");
  }
  const std::size_t rank = bytes[7];
  if (rank < 1 || rank > kMaxRank) {
    throw ParseError("rank", 7, "bad rank " + std::to_string(rank) + " at offset 7");
  }
  const std::size_t dims_end = 8 + 4 * rank;
  if (bytes.size() < dims_end) {
    throw ParseError("dims", bytes.size(),
                     "truncated dims at offset " + std::to_string(bytes.size()));
  }
  for (std::size_t r = 0; r < rank; ++r) t.dims.push_back(get_u32(&bytes[8 + 4 * r]));
  const std::size_t count = t.element_count();
  const std::size_t width = t.dtype == DType::kFloat32 ? 4 : 1;
  const std::size_t expected = dims_end + count * width;
  if (bytes.size() != expected) {
    const std::size_t at = std::min(bytes.size(), expected);
    throw ParseError("payload", at,
                     "payload length mismatch at offset " + std::to_string(at) +
                         " (expected " + std::to_string(count * width) +
                         " bytes, found " + std::to_string(bytes.size() - dims_end) + ")");
  }
  const std::uint8_t* p = bytes.data() + dims_end;
  if (t.dtype == DType::kFloat32) {
    t.f32.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      t.f32[i] = std::bit_cast<float>(get_u32(p + 4 * i));
    }
  } else {
    t.u8.assign(p, p + count);
  }
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()),
                                   text.size()));
}

std::string read_text_file(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

void write_tensor(const std::filesystem::path& path,
                  std::span<const std::uint32_t> dims,
                  std::span<const float> values) {
  write_file_bytes(path, encode_tensor(dims, values));
}

void write_tensor(const std::filesystem::path& path,
                  std::span<const std::uint32_t> dims,
                  std::span<const std::uint8_t> values) {
  write_file_bytes(path, encode_tensor(dims, values));
}

TensorFile read_tensor(const std::filesystem::path& path) {
  auto bytes = read_file_bytes(path);
  try {
    return decode_tensor(bytes);
  } catch (const ParseError& e) {
    throw ParseError(e.field(), e.offset(), path.string() + ": " + e.what());
  }
}

void write_feature_map(const std::filesystem::path& path, const FeatureMap& map) {
  std::vector<float> v(map.values.begin(), map.values.end());
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(map.height),
                                  static_cast<std::uint32_t>(map.width)};
  if (map.channels != 1) dims.push_back(static_cast<std::uint32_t>(map.channels));
  write_tensor(path, dims, v);
}

FeatureMap read_feature_map(const std::filesystem::path& path) {
  auto t = read_tensor(path);
  if (t.dims.size() < 2 || t.dims.size() > 3) {
    throw ParseError("dims", 7, path.string() + ": expected an H x W [x C] tensor");
  }
  FeatureMap m(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
               t.dims.size() == 3 ? static_cast<int>(t.dims[2]) : 1);
  if (t.dtype == DType::kFloat32) {
    std::copy(t.f32.begin(), t.f32.end(), m.values.begin());
  } else {
    std::copy(t.u8.begin(), t.u8.end(), m.values.begin());
  }
  return m;
}

void write_grid(const std::filesystem::path& path, const FeatureGrid& grid) {
  const auto v = static_cast<std::uint32_t>(grid.spec.resolution);
  std::vector<std::uint32_t> dims{v, v, v};
  if (grid.channels != 1) dims.push_back(static_cast<std::uint32_t>(grid.channels));
  std::vector<float> vals(grid.values.begin(), grid.values.end());
  write_tensor(path, dims, vals);
}

FeatureGrid read_grid(const std::filesystem::path& path, VoxelGridSpec spec) {
  auto t = read_tensor(path);
  if (t.dims.size() < 3 || t.dims.size() > 4 || t.dims[0] != t.dims[1] ||
      t.dims[1] != t.dims[2]) {
    throw ParseError("dims", 7, path.string() + ": expected a V^3 [x C] tensor");
  }
  spec.resolution = static_cast<int>(t.dims[0]);
  FeatureGrid g(spec, t.dims.size() == 4 ? static_cast<int>(t.dims[3]) : 1);
  if (t.dtype == DType::kFloat32) {
    std::copy(t.f32.begin(), t.f32.end(), g.values.begin());
  } else {
    std::copy(t.u8.begin(), t.u8.end(), g.values.begin());
  }
  return g;
}

std::string format_cameras(const std::vector<Camera>& cameras) {
  std::string out;
  for (const auto& cam : cameras) {
    const auto& k = cam.intrinsics;
    const auto& p = cam.pose;
    out += fmt17(k.fx) + ' ' + fmt17(k.fy) + ' ' + fmt17(k.cx) + ' ' + fmt17(k.cy) +
           ' ' + std::to_string(k.width) + ' ' + std::to_string(k.height);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out += ' ' + fmt17(p.rotation(r, c));
    for (int r = 0; r < 3; ++r) out += ' ' + fmt17(p.translation(r));
    out += '\n';
  }
  return out;
}

std::vector<Camera> parse_cameras(const std::string& text) {
  std::vector<Camera> cams;
  std::istringstream lines(text);
  std::string line;
  int lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::vector<double> v;
    std::string tok;
    while (fields >> tok) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError("camera", static_cast<std::size_t>(lineno),
                         "cameras: bad number '" + tok + "' on line " +
                             std::to_string(lineno));
      }
    }
    if (v.size() != 18) {
      throw ParseError("camera", static_cast<std::size_t>(lineno),
                       "cameras: expected 18 values on line " + std::to_string(lineno) +
                           ", found " + std::to_string(v.size()));
    }
    Camera c;
    c.intrinsics = {v[0], v[1], v[2], v[3], static_cast<int>(v[4]),
                    static_cast<int>(v[5])};
    for (int r = 0; r < 3; ++r)
      for (int col = 0; col < 3; ++col) c.pose.rotation(r, col) = v[6 + 3 * r + col];
    c.pose.translation = Vec3(v[15], v[16], v[17]);
    try {
      c.intrinsics.validate();
      c.pose.validate();
    } catch (const InvalidArgument& e) {
      throw ParseError("camera", static_cast<std::size_t>(lineno),
                       std::string("cameras: line ") + std::to_string(lineno) + ": " +
                           e.what());
    }
    cams.push_back(c);
  }
  return cams;
}

void write_cameras(const std::filesystem::path& path,
                   const std::vector<Camera>& cameras) {
  write_text_file(path, format_cameras(cameras));
}

std::vector<Camera> read_cameras(const std::filesystem::path& path) {
  return parse_cameras(read_text_file(path));
}

std::string format_ply(std::span<const Vec3> points, std::span<const Rgb8> colors) {
  if (!colors.empty() && colors.size() != points.size()) {
    throw InvalidArgument("ply: color count does not match point count");
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].allFinite()) {
      throw InvalidArgument("ply: non-finite coordinate at point index " +
                            std::to_string(i));
    }
  }
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << points.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (!colors.empty()) {
    os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  }
  os << "end_header\n";
  os << std::setprecision(9);
  for (std::size_t i = 0; i < points.size(); ++i) {
    os << points[i].x() << ' ' << points[i].y() << ' ' << points[i].z();
    if (!colors.empty()) {
      os << ' ' << int{colors[i].r} << ' ' << int{colors[i].g} << ' ' << int{colors[i].b};
    }
    os << '\n';
  }
  return os.str();
}

void export_ply(const std::filesystem::path& path, std::span<const Vec3> points,
                std::span<const Rgb8> colors) {
  write_text_file(path, format_ply(points, colors));
}

}  // namespace lsm::io
