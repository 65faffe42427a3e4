#include "partdisc/npy.hpp"

#include <bit>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "partdisc/errors.hpp"

namespace partdisc {
namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicLen = 6;

std::uint32_t byteswap32(std::uint32_t v) {
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

// Converts between host order and little-endian in place.
void to_from_little(std::vector<float>& values) {
  if constexpr (std::endian::native == std::endian::little) {
    return;
  } else {
    for (float& f : values) {
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      bits = byteswap32(bits);
      std::memcpy(&f, &bits, 4);
    }
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::size_t> parse_shape(const std::string& text, const std::string& where) {
  std::vector<std::size_t> shape;
  std::size_t pos = 0;
  while (pos < text.size()) {
    while (pos < text.size() && (text[pos] == ' ' || text[pos] == ',')) ++pos;
    if (pos >= text.size()) break;
    std::size_t end = pos;
    while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
    if (end == pos) throw DataError("malformed header (shape) in " + where);
    shape.push_back(std::stoull(text.substr(pos, end - pos)));
    pos = end;
  }
  return shape;
}

}  // namespace

NpyArray read_npy(const std::filesystem::path& path) {
  const std::string where = path.string();
  const std::string bytes = read_file(path);
  if (bytes.size() < 10 || bytes.compare(0, kMagicLen, kMagic, kMagicLen) != 0) {
    throw DataError("malformed header (bad magic) in " + where);
  }
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw DataError("malformed header (truncated) in " + where);
    for (int i = 0; i < 4; ++i) {
      header_len |= static_cast<std::size_t>(static_cast<unsigned char>(bytes[8 + i])) << (8 * i);
    }
    offset = 12;
  } else {
    throw DataError("malformed header (unsupported version) in " + where);
  }
  if (bytes.size() < offset + header_len) {
    throw DataError("malformed header (truncated) in " + where);
  }
  const std::string header = bytes.substr(offset, header_len);

  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex fortran_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(([^)]*)\))");
  std::smatch m;
  if (!std::regex_search(header, m, descr_re)) {
    throw DataError("malformed header (descr) in " + where);
  }
  const std::string descr = m[1];
  if (descr != "<f4" && !(descr == "=f4" && std::endian::native == std::endian::little)) {
    throw DataError("non-32-bit-real dtype '" + descr + "' in " + where);
  }
  if (!std::regex_search(header, m, fortran_re)) {
    throw DataError("malformed header (fortran_order) in " + where);
  }
  if (m[1] == "True") throw DataError("Fortran-order arrays are not supported: " + where);
  if (!std::regex_search(header, m, shape_re)) {
    throw DataError("malformed header (shape) in " + where);
  }

  NpyArray arr;
  arr.shape = parse_shape(m[1], where);
  std::size_t count = 1;
  for (std::size_t d : arr.shape) count *= d;
  const std::size_t data_start = offset + header_len;
  if (bytes.size() - data_start != count * sizeof(float)) {
    throw DataError("payload size does not match header shape in " + where);
  }
  arr.data.resize(count);
  if (count > 0) std::memcpy(arr.data.data(), bytes.data() + data_start, count * sizeof(float));
  to_from_little(arr.data);
  return arr;
}

void write_npy(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
               const std::vector<float>& data) {
  std::size_t count = 1;
  for (std::size_t d : shape) count *= d;
  if (count != data.size()) throw UsageError("write_npy: shape does not match data length");

  std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    dict += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) dict += ",";
    if (i + 1 < shape.size()) dict += " ";
  }
  dict += "), }";
  // Pad so the payload starts on a 64-byte boundary; header ends in '\n'.
  const std::size_t unpadded = 10 + dict.size() + 1;
  dict.append((64 - unpadded % 64) % 64, ' ');
  dict += '\n';
  if (dict.size() > 0xffff) throw UsageError("write_npy: header too long");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path.string());
  out.write(kMagic, kMagicLen);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const char len[2] = {static_cast<char>(dict.size() & 0xff),
                       static_cast<char>((dict.size() >> 8) & 0xff)};
  out.write(len, 2);
  out.write(dict.data(), static_cast<std::streamsize>(dict.size()));
  std::vector<float> le = data;
  to_from_little(le);
  out.write(reinterpret_cast<const char*>(le.data()),
            static_cast<std::streamsize>(le.size() * sizeof(float)));
  if (!out) throw DataError("write failed: " + path.string());
}

FeatureMap load_feature_map(const std::filesystem::path& path) {
  NpyArray arr = read_npy(path);
  if (arr.shape.size() != 3) {
    throw DataError("non-rank-3 tensor (rank " + std::to_string(arr.shape.size()) + ") in " +
                    path.string());
  }
  FeatureMap fm(static_cast<int>(arr.shape[0]), static_cast<int>(arr.shape[1]),
                static_cast<int>(arr.shape[2]), std::move(arr.data));
  if (!fm.all_finite()) throw DataError("non-finite values in " + path.string());
  return fm;
}

void save_feature_map(const std::filesystem::path& path, const FeatureMap& fm) {
  write_npy(path,
            {static_cast<std::size_t>(fm.height()), static_cast<std::size_t>(fm.width()),
             static_cast<std::size_t>(fm.channels())},
            fm.data());
}

void write_raw_f32(const std::filesystem::path& path, const std::vector<float>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open file for writing: " + path.string());
  std::vector<float> le = values;
  to_from_little(le);
  out.write(reinterpret_cast<const char*>(le.data()),
            static_cast<std::streamsize>(le.size() * sizeof(float)));
  if (!out) throw DataError("write failed: " + path.string());
}

std::vector<float> read_raw_f32(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() % sizeof(float) != 0) {
    throw DataError("raw float32 file has a partial trailing value: " + path.string());
  }
  std::vector<float> values(bytes.size() / sizeof(float));
  if (!values.empty()) std::memcpy(values.data(), bytes.data(), bytes.size());
  to_from_little(values);
  return values;
}

}  // namespace partdisc
