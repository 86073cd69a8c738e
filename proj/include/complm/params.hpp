// params.hpp
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

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "complm/common.hpp"
#include "complm/serialize.hpp"

namespace complm {

// Partition labels. Theta covers everything trainable except the activation
// network; zeta is the activation network; frozen tensors (the shared input
// embedding during composite training) are excluded from both.
enum class ParamPart : uint8_t { kTheta = 0, kZeta = 1, kFrozen = 2 };

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;  // same shape, zero when not in use
  ParamPart part = ParamPart::kTheta;
};

// Named tensor collection with stable registration order and stable
// addresses (autodiff leaves hold Parameter pointers).
class ParameterSet {
 public:
  Parameter& Add(const std::string& name, int rows, int cols,
                 ParamPart part = ParamPart::kTheta) {
    Require(!index_.count(name), "duplicate parameter: " + name);
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value = Mat::Zero(rows, cols);
    p->grad = Mat::Zero(rows, cols);
    p->part = part;
    index_[name] = int(params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  bool Has(const std::string& name) const { return index_.count(name) > 0; }

  Parameter& Get(const std::string& name) {
    auto it = index_.find(name);
    Require(it != index_.end(), "unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter& Get(const std::string& name) const {
    auto it = index_.find(name);
    Require(it != index_.end(), "unknown parameter: " + name);
    return *params_[it->second];
  }

  size_t size() const { return params_.size(); }
  Parameter& at(size_t i) { return *params_[i]; }
  const Parameter& at(size_t i) const { return *params_[i]; }

  void ZeroGrads() {
    for (auto& p : params_) p->grad.setZero();
  }

  long CountValues(ParamPart part) const {
    long n = 0;
    for (const auto& p : params_)
      if (p->part == part) n += p->value.size();
    return n;
  }

  void Serialize(std::ostream& os) const {
    io::WriteU64(os, params_.size());
    for (const auto& p : params_) {
      io::WriteString(os, p->name);
      io::WriteU8(os, uint8_t(p->part));
      io::WriteMat(os, p->value);
    }
  }

  // Loads values into an already-built set (shapes must match) so the
  // architecture stays defined by code, not by the file.
  void DeserializeInto(std::istream& is) {
    uint64_t n = io::ReadU64(is);
    Require(n == params_.size(), "checkpoint parameter count mismatch");
    for (uint64_t i = 0; i < n; ++i) {
      std::string name = io::ReadString(is);
      ParamPart part = ParamPart(io::ReadU8(is));
      Mat value = io::ReadMat(is);
      Parameter& p = Get(name);
      Require(p.part == part, "partition mismatch for " + name);
      Require(p.value.rows() == value.rows() && p.value.cols() == value.cols(),
              "shape mismatch for " + name);
      p.value = std::move(value);
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, int> index_;
};

// All weights uniform(-0.05, 0.05); biases stay zero unless initialized
// explicitly (the LSTM forget gate gets +1).
inline void InitUniform(Parameter& p, Rng& rng, double scale = 0.05) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (Eigen::Index j = 0; j < p.value.cols(); ++j)
    for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = dist(rng);
}

}  // namespace complm
