#include "stoodx/npy.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>

#include "stoodx/error.hpp"

namespace stoodx::npy {

static_assert(std::endian::native == std::endian::little, "NPY I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";

[[noreturn]] void malformed(const std::filesystem::path& path, const std::string& why) {
  throw Error(Errc::MalformedHeader, "featurestore", path.string() + ": " + why);
}

}  // namespace

Matrix<float> load_f32(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "featurestore", "cannot open " + path.string());

  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0) malformed(path, "bad magic");
  unsigned char version[2];
  if (!in.read(reinterpret_cast<char*>(version), 2)) malformed(path, "truncated version");
  if (version[0] != 1) malformed(path, "only NPY v1.0 is supported");
  unsigned char len_bytes[2];
  if (!in.read(reinterpret_cast<char*>(len_bytes), 2)) malformed(path, "truncated header length");
  const std::size_t header_len = len_bytes[0] | (static_cast<std::size_t>(len_bytes[1]) << 8);
  std::string header(header_len, '\0');
  if (!in.read(header.data(), static_cast<std::streamsize>(header_len)))
    malformed(path, "truncated header");

  std::smatch m;
  static const std::regex descr_re(R"('descr'\s*:\s*'([^']*)')");
  static const std::regex order_re(R"('fortran_order'\s*:\s*(True|False))");
  static const std::regex shape_re(R"('shape'\s*:\s*\(\s*(\d+)\s*,\s*(\d+)\s*,?\s*\))");
  if (!std::regex_search(header, m, descr_re)) malformed(path, "missing descr");
  const std::string descr = m[1];
  if (!std::regex_search(header, m, order_re)) malformed(path, "missing fortran_order");
  if (m[1] == "True") malformed(path, "fortran order not supported");
  if (!std::regex_search(header, m, shape_re)) malformed(path, "expected a 2-D shape");
  const std::size_t rows = std::stoull(m[1]);
  const std::size_t cols = std::stoull(m[2]);

  Matrix<float> out(rows, cols);
  const std::size_t count = rows * cols;
  if (descr == "<f4") {
    if (!in.read(reinterpret_cast<char*>(out.data.data()),
                 static_cast<std::streamsize>(count * sizeof(float))))
      malformed(path, "truncated data");
  } else if (descr == "<f8") {
    std::vector<double> wide(count);
    if (!in.read(reinterpret_cast<char*>(wide.data()),
                 static_cast<std::streamsize>(count * sizeof(double))))
      malformed(path, "truncated data");
    for (std::size_t i = 0; i < count; ++i) out.data[i] = static_cast<float>(wide[i]);
    warn("featurestore", path.string() + ": float64 input narrowed to float32");
  } else {
    malformed(path, "unsupported dtype " + descr);
  }
  return out;
}

void save_f32(const std::filesystem::path& path, const Matrix<float>& m) {
  std::ostringstream dict;
  dict << "{'descr': '<f4', 'fortran_order': False, 'shape': (" << m.rows << ", " << m.cols
       << "), }";
  std::string header = dict.str();
  // magic(6) + version(2) + len(2) + header + '\n' padded to a multiple of 64
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "featurestore", "cannot write " + path.string());
  out.write(kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const unsigned char len[2] = {static_cast<unsigned char>(header.size() & 0xff),
                                static_cast<unsigned char>((header.size() >> 8) & 0xff)};
  out.write(reinterpret_cast<const char*>(len), 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size() * sizeof(float)));
  if (!out) throw Error(Errc::IoError, "featurestore", "short write to " + path.string());
}

}  // namespace stoodx::npy
