#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "pscene/types.hpp"

// Little-endian binary primitives shared by the artifact file formats.

namespace pscene::binio {

static_assert(std::endian::native == std::endian::little,
              "artifact formats assume a little-endian host");

inline void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_i64(std::ostream& out, std::int64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64(std::ostream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64_vec(std::ostream& out, const std::vector<double>& v) {
  write_i64(out, static_cast<std::int64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
}

inline void write_u16_vec(std::ostream& out, const std::vector<std::uint16_t>& v) {
  write_i64(out, static_cast<std::int64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(std::uint16_t)));
}

inline std::uint32_t read_u32(std::istream& in, const char* what) {
  std::uint32_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(std::string("truncated field: ") + what);
  return v;
}

inline std::int64_t read_i64(std::istream& in, const char* what) {
  std::int64_t v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(std::string("truncated field: ") + what);
  return v;
}

inline double read_f64(std::istream& in, const char* what) {
  double v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw DataError(std::string("truncated field: ") + what);
  return v;
}

inline std::vector<double> read_f64_vec(std::istream& in, const char* what) {
  const std::int64_t n = read_i64(in, what);
  if (n < 0) throw DataError(std::string("negative length: ") + what);
  std::vector<double> v(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError(std::string("truncated array: ") + what);
  return v;
}

inline std::vector<std::uint16_t> read_u16_vec(std::istream& in, const char* what) {
  const std::int64_t n = read_i64(in, what);
  if (n < 0) throw DataError(std::string("negative length: ") + what);
  std::vector<std::uint16_t> v(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(v.data()),
          static_cast<std::streamsize>(n * sizeof(std::uint16_t)));
  if (!in) throw DataError(std::string("truncated array: ") + what);
  return v;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void expect_magic(std::istream& in, const char magic[4], const char* format_name) {
  char buf[4] = {};
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw DataError(std::string("bad magic, not a ") + format_name + " file");
}

inline void expect_version(std::istream& in, std::uint32_t expected, const char* format_name) {
  const std::uint32_t v = read_u32(in, "format version");
  if (v != expected)
    throw DataError(std::string("unsupported ") + format_name + " version " + std::to_string(v));
}

}  // namespace pscene::binio
