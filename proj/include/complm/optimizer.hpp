// optimizer.hpp
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

#include <cmath>
#include <map>
#include <string>

#include "complm/common.hpp"
#include "complm/params.hpp"
#include "complm/serialize.hpp"

namespace complm {

struct AdamConfig {
  double lr0 = 0.001;
  double lr_decay_per_1k = 0.7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global-norm clip over the updated grads; <=0 off
};

// lr(t) = lr0 * decay^(t / 1000)
inline double LrSchedule(double lr0, double decay_per_1k, long step) {
  return lr0 * std::pow(decay_per_1k, double(step) / 1000.0);
}

// Adam with per-parameter moments and bias-correction counters. The update
// step counter that drives the learning-rate schedule is global; a call
// updates only parameters selected by the partition filter ("present in
// grads"), leaving the moments of the others untouched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return global_step_; }
  double CurrentLr() const {
    return LrSchedule(cfg_.lr0, cfg_.lr_decay_per_1k, global_step_);
  }

  // One update over every parameter whose part is in `parts`. Gradients are
  // read from Parameter::grad and zeroed afterwards. Returns the lr used.
  template <typename PartPred>
  double Step(ParameterSet& params, PartPred include) {
    const double lr = CurrentLr();
    ++global_step_;

    if (cfg_.clip_norm > 0) {
      double sq = 0;
      for (size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params.at(i);
        if (!include(p.part)) continue;
        sq += p.grad.squaredNorm();
      }
      double norm = std::sqrt(sq);
      if (norm > cfg_.clip_norm) {
        double scale = cfg_.clip_norm / norm;
        for (size_t i = 0; i < params.size(); ++i) {
          Parameter& p = params.at(i);
          if (include(p.part)) p.grad *= scale;
        }
      }
    }

    for (size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params.at(i);
      if (!include(p.part)) continue;
      Slot& s = slots_[p.name];
      if (s.m.size() == 0) {
        s.m = Mat::Zero(p.value.rows(), p.value.cols());
        s.v = Mat::Zero(p.value.rows(), p.value.cols());
      }
      Require(s.m.rows() == p.value.rows() && s.m.cols() == p.value.cols(),
              "optimizer state shape mismatch for " + p.name);
      ++s.steps;
      s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * p.grad;
      s.v = cfg_.beta2 * s.v.array() +
            (1.0 - cfg_.beta2) * p.grad.array().square();
      const double bc1 = 1.0 - std::pow(cfg_.beta1, double(s.steps));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, double(s.steps));
      p.value.array() -= lr * (s.m.array() / bc1) /
                         ((s.v.array() / bc2).sqrt() + cfg_.eps);
      p.grad.setZero();
    }
    return lr;
  }

  double StepAll(ParameterSet& params) {
    return Step(params, [](ParamPart p) { return p != ParamPart::kFrozen; });
  }

  void Serialize(std::ostream& os) const {
    io::WriteI64(os, global_step_);
    io::WriteF64(os, cfg_.lr0);
    io::WriteF64(os, cfg_.lr_decay_per_1k);
    io::WriteU64(os, slots_.size());
    for (const auto& [name, s] : slots_) {
      io::WriteString(os, name);
      io::WriteI64(os, s.steps);
      io::WriteMat(os, s.m);
      io::WriteMat(os, s.v);
    }
  }

  void Deserialize(std::istream& is) {
    slots_.clear();
    global_step_ = io::ReadI64(is);
    cfg_.lr0 = io::ReadF64(is);
    cfg_.lr_decay_per_1k = io::ReadF64(is);
    uint64_t n = io::ReadU64(is);
    for (uint64_t i = 0; i < n; ++i) {
      std::string name = io::ReadString(is);
      Slot s;
      s.steps = io::ReadI64(is);
      s.m = io::ReadMat(is);
      s.v = io::ReadMat(is);
      slots_.emplace(std::move(name), std::move(s));
    }
  }

 private:
  struct Slot {
    Mat m, v;
    long steps = 0;
  };

  AdamConfig cfg_;
  long global_step_ = 0;
  std::map<std::string, Slot> slots_;
};

}  // namespace complm
