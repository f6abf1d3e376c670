#pragma once

#include "riskgen/common.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace riskgen::binio {

// Binary block primitives. All multi-byte values are little-endian regardless
// of host order; float blocks hold IEEE-754 binary32 in row-major sample
// order. Readers throw std::runtime_error on short reads, so truncated files
// surface as errors rather than garbage.

void put_u32(std::ostream& os, std::uint32_t v);
void put_u64(std::ostream& os, std::uint64_t v);
void put_i32(std::ostream& os, std::int32_t v);
void put_f32(std::ostream& os, float v);

std::uint32_t get_u32(std::istream& is);
std::uint64_t get_u64(std::istream& is);
std::int32_t get_i32(std::istream& is);
float get_f32(std::istream& is);

void put_f32_matrix(std::ostream& os, const Matrix& m);
Matrix get_f32_matrix(std::istream& is, int rows, int cols);

void put_i32_vector(std::ostream& os, const std::vector<int>& v);
std::vector<int> get_i32_vector(std::istream& is, std::size_t n);

void put_string(std::ostream& os, const std::string& s);
std::string get_string(std::istream& is);

/// Rounds every entry through binary32 so a float block round-trips bitwise.
void snap_f32(Matrix& m);
void snap_f32(Vector& v);

/// Writes bytes to path atomically (temp file in the same directory + rename).
void write_file_atomic(const std::string& path, const std::string& bytes);

std::string read_file(const std::string& path);

}  // namespace riskgen::binio
