#include "riskgen/binio.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace riskgen::binio {

namespace {

void put_bytes_le(std::ostream& os, std::uint64_t v, int nbytes) {
  char buf[8];
  for (int i = 0; i < nbytes; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf, nbytes);
}

std::uint64_t get_bytes_le(std::istream& is, int nbytes) {
  char buf[8];
  is.read(buf, nbytes);
  if (is.gcount() != nbytes) throw std::runtime_error("binio: unexpected end of stream");
  std::uint64_t v = 0;
  for (int i = 0; i < nbytes; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return v;
}

}  // namespace

void put_u32(std::ostream& os, std::uint32_t v) { put_bytes_le(os, v, 4); }
void put_u64(std::ostream& os, std::uint64_t v) { put_bytes_le(os, v, 8); }
void put_i32(std::ostream& os, std::int32_t v) {
  put_bytes_le(os, static_cast<std::uint32_t>(v), 4);
}

void put_f32(std::ostream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_bytes_le(os, bits, 4);
}

std::uint32_t get_u32(std::istream& is) { return static_cast<std::uint32_t>(get_bytes_le(is, 4)); }
std::uint64_t get_u64(std::istream& is) { return get_bytes_le(is, 8); }
std::int32_t get_i32(std::istream& is) {
  return static_cast<std::int32_t>(static_cast<std::uint32_t>(get_bytes_le(is, 4)));
}

float get_f32(std::istream& is) {
  std::uint32_t bits = get_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

void put_f32_matrix(std::ostream& os, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      put_f32(os, static_cast<float>(m(r, c)));
}

Matrix get_f32_matrix(std::istream& is, int rows, int cols) {
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = static_cast<double>(get_f32(is));
  return m;
}

void put_i32_vector(std::ostream& os, const std::vector<int>& v) {
  for (int x : v) put_i32(os, x);
}

std::vector<int> get_i32_vector(std::istream& is, std::size_t n) {
  std::vector<int> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = get_i32(is);
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  std::uint64_t n = get_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (static_cast<std::uint64_t>(is.gcount()) != n)
    throw std::runtime_error("binio: unexpected end of stream");
  return s;
}

void snap_f32(Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      m(r, c) = static_cast<double>(static_cast<float>(m(r, c)));
}

void snap_f32(Vector& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    v(i) = static_cast<double>(static_cast<float>(v(i)));
}

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("binio: cannot open " + tmp.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw std::runtime_error("binio: short write to " + tmp.string());
  }
  fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("binio: cannot open " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace riskgen::binio
