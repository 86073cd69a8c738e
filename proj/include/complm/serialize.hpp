// serialize.hpp
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//
// Copyright 2026 The complm Authors
//
// Little-endian binary primitives shared by the checkpoint and WFST file
// formats. The exact layouts are documented in docs/formats.md.

#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

#include "complm/common.hpp"

namespace complm::io {

inline void WriteU8(std::ostream& os, uint8_t v) {
  os.write(reinterpret_cast<const char*>(&v), 1);
}
inline void WriteU32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void WriteU64(std::ostream& os, uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void WriteI64(std::ostream& os, int64_t v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void WriteF64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), 8);
}
inline void WriteString(std::ostream& os, const std::string& s) {
  WriteU64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}
inline void WriteMat(std::ostream& os, const Mat& m) {
  WriteU64(os, uint64_t(m.rows()));
  WriteU64(os, uint64_t(m.cols()));
  os.write(reinterpret_cast<const char*>(m.data()),
           std::streamsize(sizeof(double) * size_t(m.size())));
}

inline uint8_t ReadU8(std::istream& is) {
  uint8_t v;
  is.read(reinterpret_cast<char*>(&v), 1);
  Require(bool(is), "truncated input");
  return v;
}
inline uint32_t ReadU32(std::istream& is) {
  uint32_t v;
  is.read(reinterpret_cast<char*>(&v), 4);
  Require(bool(is), "truncated input");
  return v;
}
inline uint64_t ReadU64(std::istream& is) {
  uint64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  Require(bool(is), "truncated input");
  return v;
}
inline int64_t ReadI64(std::istream& is) {
  int64_t v;
  is.read(reinterpret_cast<char*>(&v), 8);
  Require(bool(is), "truncated input");
  return v;
}
inline double ReadF64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), 8);
  Require(bool(is), "truncated input");
  return v;
}
inline std::string ReadString(std::istream& is) {
  uint64_t n = ReadU64(is);
  Require(n < (1ull << 32), "corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  Require(bool(is), "truncated input");
  return s;
}
inline Mat ReadMat(std::istream& is) {
  uint64_t r = ReadU64(is);
  uint64_t c = ReadU64(is);
  Require(r < (1ull << 31) && c < (1ull << 31), "corrupt matrix shape");
  Mat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  is.read(reinterpret_cast<char*>(m.data()),
          std::streamsize(sizeof(double) * size_t(m.size())));
  Require(bool(is), "truncated input");
  return m;
}

inline void ExpectMagic(std::istream& is, const char magic[4],
                        const std::string& what) {
  char buf[4];
  is.read(buf, 4);
  Require(bool(is) && std::equal(buf, buf + 4, magic),
          "bad magic, not a " + what + " file", ErrorKind::kUsage);
}

}  // namespace complm::io
