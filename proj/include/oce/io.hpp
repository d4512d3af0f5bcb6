#pragma once

// Binary tensor container ("OCET"), a named multi-tensor archive ("OCEA")
// used for checkpoints, and binary PGM (P5) images.
//
// OCET layout, all integers little-endian:
//   4 bytes  magic "OCET"
//   1 byte   version (1)
//   1 byte   dtype (0 = float32, 1 = int32, 2 = uint8)
//   1 byte   ndim
//   ndim x 4 bytes  dims (uint32)
//   payload, row-major, element size x product(dims) bytes
//
// OCEA layout:
//   4 bytes  magic "OCEA", 1 byte version (1), uint32 entry count, then per
//   entry: uint32 name length, name bytes (UTF-8), one complete OCET record.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "oce/error.hpp"
#include "oce/tensor.hpp"

namespace oce::io {

inline constexpr std::uint8_t kTensorFileVersion = 1;
inline constexpr std::uint8_t kArchiveVersion = 1;

enum class DType : std::uint8_t { Float32 = 0, Int32 = 1, UInt8 = 2 };

inline std::size_t element_size(DType dtype) { return dtype == DType::UInt8 ? 1 : 4; }

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::Float32; }
template <>
constexpr DType dtype_of<std::int32_t>() { return DType::Int32; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::UInt8; }

/// Untyped decoded record.
struct TensorRecord {
  DType dtype = DType::Float32;
  Shape shape;
  std::vector<std::uint8_t> payload;  // little-endian element bytes
};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw IoError(IoErrorKind::Truncated, std::string("unexpected end of data reading ") + what);
    }
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint32_t u32(const char* what) { return get_u32(take(4, what).data()); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
std::uint32_t to_bits(T v) {
  if constexpr (std::is_same_v<T, float>) return std::bit_cast<std::uint32_t>(v);
  else return static_cast<std::uint32_t>(v);
}

template <typename T>
T from_bits(std::uint32_t v) {
  if constexpr (std::is_same_v<T, float>) return std::bit_cast<float>(v);
  else return static_cast<T>(v);
}

inline TensorRecord decode_record(Reader& in) {
  auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), "OCET", 4) != 0) throw IoError(IoErrorKind::Magic, "not an OCET tensor record");
  const std::uint8_t version = in.u8("version");
  if (version != kTensorFileVersion) {
    throw IoError(IoErrorKind::Version, "expected tensor format version " + std::to_string(kTensorFileVersion) +
                                            ", found " + std::to_string(version));
  }
  const std::uint8_t dtype = in.u8("dtype");
  if (dtype > 2) throw IoError(IoErrorKind::DType, "unknown dtype code " + std::to_string(dtype));
  TensorRecord rec;
  rec.dtype = static_cast<DType>(dtype);
  const std::uint8_t ndim = in.u8("ndim");
  std::uint64_t count = 1;
  bool overflow = false;
  for (std::uint8_t i = 0; i < ndim; ++i) {
    const std::uint32_t d = in.u32("dims");
    rec.shape.push_back(d);
    if (d != 0 && count > (std::uint64_t{1} << 48) / d) overflow = true;
    count *= d;
  }
  const std::uint64_t bytes = count * element_size(rec.dtype);
  if (overflow || bytes > in.remaining()) {
    throw IoError(IoErrorKind::Truncated, "payload of " + shape_str(rec.shape) + " exceeds remaining " +
                                              std::to_string(in.remaining()) + " bytes");
  }
  auto payload = in.take(static_cast<std::size_t>(bytes), "payload");
  rec.payload.assign(payload.begin(), payload.end());
  return rec;
}

inline std::vector<std::uint8_t> read_all(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError(IoErrorKind::Open, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(IoErrorKind::Open, "cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError(IoErrorKind::Open, "write failed for " + path.string());
}

}  // namespace detail

template <typename T>
void encode_tensor(const Tensor<T>& t, std::vector<std::uint8_t>& out) {
  if (t.ndim() > 255) throw PreconditionError("encode_tensor: too many dimensions");
  out.insert(out.end(), {'O', 'C', 'E', 'T', kTensorFileVersion, static_cast<std::uint8_t>(dtype_of<T>()),
                         static_cast<std::uint8_t>(t.ndim())});
  for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (T v : t.data()) {
    if constexpr (sizeof(T) == 1) out.push_back(static_cast<std::uint8_t>(v));
    else detail::put_u32(out, detail::to_bits(v));
  }
}

template <typename T>
Tensor<T> to_tensor(const TensorRecord& rec) {
  if (rec.dtype != dtype_of<T>()) {
    throw IoError(IoErrorKind::DType, "expected dtype " + std::to_string(static_cast<int>(dtype_of<T>())) +
                                          ", found " + std::to_string(static_cast<int>(rec.dtype)));
  }
  Tensor<T> t(rec.shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if constexpr (sizeof(T) == 1) t[i] = rec.payload[i];
    else t[i] = detail::from_bits<T>(detail::get_u32(rec.payload.data() + 4 * i));
  }
  return t;
}

inline TensorRecord decode_tensor(std::span<const std::uint8_t> bytes) {
  detail::Reader in(bytes);
  TensorRecord rec = detail::decode_record(in);
  if (in.remaining() != 0) throw IoError(IoErrorKind::Format, "trailing bytes after tensor payload");
  return rec;
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::vector<std::uint8_t> bytes;
  encode_tensor(t, bytes);
  detail::write_all(path, bytes);
}

inline TensorRecord read_tensor_record(const std::filesystem::path& path) {
  return decode_tensor(detail::read_all(path));
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  return to_tensor<T>(read_tensor_record(path));
}

/// Label masks are stored as int32 with shape (H, W).
inline LabelMask read_labels(const std::filesystem::path& path) {
  LabelMask labels = read_tensor<std::int32_t>(path);
  if (labels.ndim() != 2) throw IoError(IoErrorKind::Format, "label mask must be 2-D, got " + shape_str(labels.shape()));
  return labels;
}

/// Named tensors in insertion order.
struct Archive {
  std::vector<std::pair<std::string, TensorRecord>> entries;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    std::vector<std::uint8_t> bytes;
    encode_tensor(t, bytes);
    entries.emplace_back(name, decode_tensor(bytes));
  }

  const TensorRecord& get(const std::string& name) const {
    for (const auto& [n, rec] : entries) {
      if (n == name) return rec;
    }
    throw IoError(IoErrorKind::Format, "archive has no entry '" + name + "'");
  }

  template <typename T>
  Tensor<T> get_tensor(const std::string& name) const {
    return to_tensor<T>(get(name));
  }

  bool contains(const std::string& name) const {
    return std::any_of(entries.begin(), entries.end(), [&](const auto& e) { return e.first == name; });
  }
};

inline std::vector<std::uint8_t> encode_archive(const Archive& archive) {
  std::vector<std::uint8_t> out{'O', 'C', 'E', 'A', kArchiveVersion};
  detail::put_u32(out, static_cast<std::uint32_t>(archive.entries.size()));
  for (const auto& [name, rec] : archive.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.insert(out.end(), {'O', 'C', 'E', 'T', kTensorFileVersion, static_cast<std::uint8_t>(rec.dtype),
                           static_cast<std::uint8_t>(rec.shape.size())});
    for (std::size_t d : rec.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    out.insert(out.end(), rec.payload.begin(), rec.payload.end());
  }
  return out;
}

inline Archive decode_archive(std::span<const std::uint8_t> bytes) {
  detail::Reader in(bytes);
  auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), "OCEA", 4) != 0) throw IoError(IoErrorKind::Magic, "not an OCEA archive");
  const std::uint8_t version = in.u8("version");
  if (version != kArchiveVersion) {
    throw IoError(IoErrorKind::Version, "expected archive version " + std::to_string(kArchiveVersion) + ", found " +
                                            std::to_string(version));
  }
  Archive archive;
  const std::uint32_t count = in.u32("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = in.u32("name length");
    auto name = in.take(len, "name");
    std::string key(name.begin(), name.end());
    archive.entries.emplace_back(std::move(key), detail::decode_record(in));
  }
  if (in.remaining() != 0) throw IoError(IoErrorKind::Format, "trailing bytes after archive");
  return archive;
}

inline void write_archive(const std::filesystem::path& path, const Archive& archive) {
  detail::write_all(path, encode_archive(archive));
}

inline Archive read_archive(const std::filesystem::path& path) { return decode_archive(detail::read_all(path)); }

// ---------------------------------------------------------------------------
// PGM (P5)

struct PgmImage {
  std::size_t height = 0, width = 0;
  std::uint32_t maxval = 255;
  std::vector<std::uint16_t> pixels;  // raw sample values
};

inline PgmImage decode_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string& what) { throw IoError(IoErrorKind::Format, "pgm: " + what); };
  if (bytes.size() < 2 || bytes[0] != 'P') fail("missing P magic");
  if (bytes[1] != '5') fail(std::string("unsupported format P") + static_cast<char>(bytes[1]) + " (only binary P5)");
  pos = 2;
  auto skip_space = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) fail(std::string("malformed header field ") + what);
    std::uint64_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      if (v > (1u << 30)) fail(std::string("header value too large for ") + what);
    }
    return v;
  };
  PgmImage img;
  img.width = number("width");
  img.height = number("height");
  img.maxval = static_cast<std::uint32_t>(number("maxval"));
  if (img.maxval == 0 || img.maxval > 65535) fail("maxval out of range");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) fail("missing whitespace after header");
  ++pos;
  const std::size_t bpp = img.maxval > 255 ? 2 : 1;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos < n * bpp) throw IoError(IoErrorKind::Truncated, "pgm: pixel data shorter than header declares");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = bpp == 1 ? bytes[pos + i]
                             : static_cast<std::uint16_t>(bytes[pos + 2 * i] << 8 | bytes[pos + 2 * i + 1]);
  }
  return img;
}

inline std::vector<std::uint8_t> encode_pgm(const PgmImage& img) {
  const std::string header =
      "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" + std::to_string(img.maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (std::uint16_t v : img.pixels) {
    if (img.maxval > 255) out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
  }
  return out;
}

inline PgmImage read_pgm_raw(const std::filesystem::path& path) { return decode_pgm(detail::read_all(path)); }
inline void write_pgm_raw(const std::filesystem::path& path, const PgmImage& img) {
  detail::write_all(path, encode_pgm(img));
}

/// Reads a P5 image as a (1, H, W) tensor scaled to [0, 1] by maxval.
inline Tensor<float> read_pgm(const std::filesystem::path& path) {
  const PgmImage img = read_pgm_raw(path);
  Tensor<float> t({1, img.height, img.width});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(img.pixels[i]) / static_cast<float>(img.maxval);
  return t;
}

/// Writes the first channel of an image, clamped to [0, 1], as 8-bit P5.
inline void write_pgm(const std::filesystem::path& path, const Tensor<float>& image) {
  const std::size_t h = image.dim(image.ndim() - 2), w = image.dim(image.ndim() - 1);
  PgmImage img{h, w, 255, std::vector<std::uint16_t>(h * w)};
  for (std::size_t i = 0; i < h * w; ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
  }
  write_pgm_raw(path, img);
}

/// Gray level for a label id: 0 stays black; ids cycle through 255 distinct
/// non-zero levels in a scrambled order so neighbours differ visibly.
inline std::uint16_t label_gray_level(std::int32_t id) {
  if (id <= 0) return 0;
  return static_cast<std::uint16_t>(1 + (static_cast<std::int64_t>(id - 1) * 97) % 255);
}

inline void write_label_pgm(const std::filesystem::path& path, const LabelMask& labels) {
  PgmImage img{labels.dim(0), labels.dim(1), 255, std::vector<std::uint16_t>(labels.size())};
  for (std::size_t i = 0; i < labels.size(); ++i) img.pixels[i] = label_gray_level(labels[i]);
  write_pgm_raw(path, img);
}

}  // namespace oce::io
