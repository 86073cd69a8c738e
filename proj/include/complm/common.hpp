// common.hpp
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

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace complm {

inline constexpr const char* kToolVersion = "0.1.0";

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Rng = std::mt19937_64;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Errors carry a category so the CLI can distinguish bad invocations
// (exit 2) from runtime failures (exit 1).
enum class ErrorKind { kUsage, kRuntime };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

inline void Require(bool cond, const std::string& msg,
                    ErrorKind kind = ErrorKind::kRuntime) {
  if (!cond) throw Error(kind, msg);
}

// log(e^a + e^b) with -inf handled.
inline double LogAddExp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

template <typename It>
double LogSumExp(It begin, It end) {
  double m = kNegInf;
  for (It it = begin; it != end; ++it) m = std::max(m, double(*it));
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (It it = begin; it != end; ++it) s += std::exp(double(*it) - m);
  return m + std::log(s);
}

inline double LogSumExp(const std::vector<double>& v) {
  return LogSumExp(v.begin(), v.end());
}

inline double Sigmoid(double x) {
  if (x >= 0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

// -log(sigmoid(x)) computed without overflow.
inline double Softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

// ---------------------------------------------------------------------------
// string helpers

inline std::vector<std::string> SplitWhitespace(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    size_t j = i;
    while (j < s.size() && !std::isspace(static_cast<unsigned char>(s[j]))) ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::vector<std::string> SplitChar(const std::string& s, char sep) {
  std::vector<std::string> out;
  size_t start = 0;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

inline std::string JoinStrings(const std::vector<std::string>& v,
                               const std::string& sep) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += sep;
    out += v[i];
  }
  return out;
}

inline std::string TrimString(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

// Splits a UTF-8 string into code points. Invalid bytes are passed through
// as single-byte units.
inline std::vector<std::string> Utf8Codepoints(std::string_view s) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < s.size()) {
    unsigned char c = s[i];
    size_t n = 1;
    if ((c & 0x80u) == 0)
      n = 1;
    else if ((c & 0xE0u) == 0xC0u)
      n = 2;
    else if ((c & 0xF0u) == 0xE0u)
      n = 3;
    else if ((c & 0xF8u) == 0xF0u)
      n = 4;
    if (i + n > s.size()) n = 1;
    out.emplace_back(s.substr(i, n));
    i += n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// file helpers

inline std::vector<std::string> ReadLines(const std::string& path) {
  std::ifstream in(path);
  Require(in.good(), "cannot open file: " + path, ErrorKind::kUsage);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline void WriteLines(const std::string& path,
                       const std::vector<std::string>& lines) {
  std::ofstream out(path);
  Require(out.good(), "cannot write file: " + path);
  for (const auto& l : lines) out << l << '\n';
}

inline std::string ReadFileBytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  Require(in.good(), "cannot open file: " + path, ErrorKind::kUsage);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// FNV-1a 64-bit digest, hex encoded. Used for input digests in run manifests.
inline std::string Fnv1a64Hex(std::string_view data) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace complm
