#pragma once

// Little-endian binary IO helpers shared by the checkpoint and feature-file
// readers/writers. All on-disk integers and floats are little-endian.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mtl/errors.hpp"

namespace mtl::binio {

template <class T>
void write_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
#endif
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T read_le(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T)))
    throw DataError("unexpected end of file while reading " + what);
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
    std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
#endif
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

inline void write_magic(std::ostream& out, const char magic[4]) {
  out.write(magic, 4);
}

inline void expect_magic(std::istream& in, const char magic[4], const std::string& what) {
  char buf[4];
  if (!in.read(buf, 4) || std::memcmp(buf, magic, 4) != 0)
    throw DataError(what + ": bad magic, not a recognized file");
}

}  // namespace mtl::binio
