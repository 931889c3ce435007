#pragma once

// Reader/writer for the NPY v1.0 array format (little-endian, C order).
// Floats are written as '<f8' and integers as '<i8'; the reader also accepts
// '<f4' and '<i4' and widens them.

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "iavkit/error.hpp"
#include "iavkit/tensor.hpp"

namespace iavkit::npy {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

enum class DType { Float64, Int64 };

struct Array {
  Shape shape;  // may be empty for 0-d arrays
  DType dtype = DType::Float64;
  std::vector<double> floats;         // when dtype == Float64
  std::vector<std::int64_t> integers; // when dtype == Int64
};

inline constexpr char kMagic[] = "\x93NUMPY";

namespace detail {

inline std::string header_dict(const std::string& descr, const Shape& shape) {
  std::ostringstream dict;
  dict << "{'descr': '" << descr << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict << shape[i];
    if (shape.size() == 1 || i + 1 < shape.size()) dict << ",";
    if (i + 1 < shape.size()) dict << " ";
  }
  dict << "), }";
  std::string header = dict.str();
  // magic(6) + version(2) + length(2) + header, padded with spaces and a
  // trailing newline so the data starts on a 64-byte boundary.
  const std::size_t prefix = 10;
  std::size_t total = prefix + header.size() + 1;
  const std::size_t padded = (total + 63) / 64 * 64;
  header.append(padded - total, ' ');
  header.push_back('\n');
  return header;
}

inline std::vector<std::uint8_t> encode(const std::string& descr, const Shape& shape, const void* data,
                                        std::size_t bytes) {
  const std::string header = header_dict(descr, shape);
  std::vector<std::uint8_t> out;
  out.reserve(10 + header.size() + bytes);
  out.insert(out.end(), kMagic, kMagic + 6);
  out.push_back(1);
  out.push_back(0);
  const auto len = static_cast<std::uint16_t>(header.size());
  out.push_back(static_cast<std::uint8_t>(len & 0xFF));
  out.push_back(static_cast<std::uint8_t>(len >> 8));
  out.insert(out.end(), header.begin(), header.end());
  const auto* bytes_ptr = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), bytes_ptr, bytes_ptr + bytes);
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const Tensor& tensor) {
  return detail::encode("<f8", tensor.shape(), tensor.storage().data(), tensor.size() * sizeof(double));
}

inline std::vector<std::uint8_t> encode(const std::vector<std::int64_t>& values) {
  return detail::encode("<i8", Shape{values.size()}, values.data(), values.size() * sizeof(std::int64_t));
}

inline Array decode(const std::vector<std::uint8_t>& bytes, const std::string& name = "array") {
  auto bad = [&](const std::string& why) -> Error {
    return Error(ErrorKind::ShapeMismatch, name + ": malformed NPY data (" + why + ")");
  };
  if (bytes.size() < 10 || std::memcmp(bytes.data(), kMagic, 6) != 0) throw bad("bad magic");
  const std::uint8_t major = bytes[6];
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw bad("truncated header");
    header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8) |
                 (static_cast<std::size_t>(bytes[10]) << 16) | (static_cast<std::size_t>(bytes[11]) << 24);
    offset = 12;
  } else {
    throw bad("unsupported version");
  }
  if (bytes.size() < offset + header_len) throw bad("truncated header");
  const std::string header(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                           bytes.begin() + static_cast<std::ptrdiff_t>(offset + header_len));

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']+)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  if (!std::regex_search(header, m, descr_re)) throw bad("missing descr");
  const std::string descr = m[1];
  if (!std::regex_search(header, m, order_re)) throw bad("missing fortran_order");
  if (m[1] == "True") throw bad("fortran order is not supported");
  if (!std::regex_search(header, m, shape_re)) throw bad("missing shape");

  Array array;
  {
    std::string dims = m[1];
    std::stringstream ss(dims);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto first = item.find_first_not_of(" \t");
      if (first == std::string::npos) continue;
      array.shape.push_back(static_cast<std::size_t>(std::stoull(item.substr(first))));
    }
  }
  std::size_t count = 1;
  for (std::size_t d : array.shape) count *= d;

  const std::uint8_t* data = bytes.data() + offset + header_len;
  const std::size_t available = bytes.size() - offset - header_len;
  auto need = [&](std::size_t width) {
    if (available != count * width) throw bad("payload size does not match shape");
  };
  if (descr == "<f8") {
    need(8);
    array.dtype = DType::Float64;
    array.floats.resize(count);
    std::memcpy(array.floats.data(), data, count * 8);
  } else if (descr == "<f4") {
    need(4);
    array.dtype = DType::Float64;
    array.floats.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      float f;
      std::memcpy(&f, data + 4 * i, 4);
      array.floats[i] = f;
    }
  } else if (descr == "<i8") {
    need(8);
    array.dtype = DType::Int64;
    array.integers.resize(count);
    std::memcpy(array.integers.data(), data, count * 8);
  } else if (descr == "<i4") {
    need(4);
    array.dtype = DType::Int64;
    array.integers.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::int32_t v;
      std::memcpy(&v, data + 4 * i, 4);
      array.integers[i] = v;
    }
  } else {
    throw bad("unsupported dtype " + descr);
  }
  return array;
}

// ---------------------------------------------------------------------------
// File helpers

inline std::uint32_t crc32(const std::vector<std::uint8_t>& bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

inline std::string crc32_hex(std::uint32_t crc) {
  std::ostringstream out;
  out << std::hex << std::setw(8) << std::setfill('0') << crc;
  return out.str();
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorKind::IoFailure, "read error on " + path.string());
  return bytes;
}

/// Writes to a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::IoFailure, "cannot write " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) fail(ErrorKind::IoFailure, "write error on " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::IoFailure, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  write_file_atomic(path, bytes.data(), bytes.size());
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

inline Tensor to_tensor(const Array& array, const std::string& name) {
  if (array.dtype != DType::Float64) fail(ErrorKind::ShapeMismatch, name + ": expected a float array");
  Shape shape = array.shape.empty() ? Shape{1} : array.shape;
  return Tensor(std::move(shape), array.floats);
}

inline std::vector<std::int64_t> to_integers(const Array& array, const std::string& name) {
  if (array.dtype != DType::Int64) fail(ErrorKind::ShapeMismatch, name + ": expected an integer array");
  if (array.shape.size() != 1) fail(ErrorKind::ShapeMismatch, name + ": expected a rank-1 integer array");
  return array.integers;
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  return to_tensor(decode(read_file(path), path.string()), path.string());
}

inline void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  write_file_atomic(path, encode(tensor));
}

}  // namespace iavkit::npy
