// component.hpp
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
// Component models: stateful next-token distributions over the shared
// vocabulary. Activation resets a component to its start state and
// replaces the previous token with <s>, so it begins a new span. Feeding
// <s> leaves a WFST start set in place (the start state is the <s>
// context) and is consumed as a regular embedding by LSTM components.

#pragma once

#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "complm/common.hpp"
#include "complm/lstm_lm.hpp"
#include "complm/vocab.hpp"
#include "complm/wfst.hpp"

namespace complm {

// Log-distribution over token ids; sparse entries are sorted by id and
// absent ids carry probability zero.
struct TokenLogDist {
  bool dense = false;
  Vec dense_logp;
  std::vector<std::pair<int, double>> entries;

  double LogProb(int id) const {
    if (dense) return dense_logp(id);
    auto it = std::lower_bound(
        entries.begin(), entries.end(), id,
        [](const std::pair<int, double>& e, int v) { return e.first < v; });
    if (it == entries.end() || it->first != id) return kNegInf;
    return it->second;
  }

  double LogEos() const { return LogProb(kEosId); }

  double LogSumExpAll() const {
    if (dense) {
      double m = dense_logp.maxCoeff();
      return m + std::log((dense_logp.array() - m).exp().sum());
    }
    double m = kNegInf;
    for (auto& [id, lp] : entries) m = std::max(m, lp);
    if (m == kNegInf) return kNegInf;
    double s = 0;
    for (auto& [id, lp] : entries) s += std::exp(lp - m);
    return m + std::log(s);
  }

  // probs += alpha * exp(logp), elementwise over the vocabulary.
  void AccumulateProbs(double alpha, Vec* probs) const {
    if (dense) {
      probs->array() += alpha * dense_logp.array().exp();
      return;
    }
    for (auto& [id, lp] : entries) (*probs)(id) += alpha * std::exp(lp);
  }
};

// Weighted posterior over automaton states; log weights sum to one.
struct WfstStateSet {
  std::vector<std::pair<int, double>> states;  // (state, log weight), sorted
};

using ComponentState = std::variant<WfstStateSet, LstmLm::State>;

class Component {
 public:
  virtual ~Component() = default;
  virtual std::string type() const = 0;
  virtual int vocab_size() const = 0;
  virtual ComponentState StartState() const = 0;
  // Advances by prev_token (after an activation reset when requested) and
  // returns the next-token log-distribution.
  virtual TokenLogDist Step(ComponentState* state, int prev_token,
                            bool activate) const = 0;
};

inline TokenLogDist ComponentStep(const Component& c, ComponentState* state,
                                  int prev_token, bool activate) {
  Require(prev_token >= 0 && prev_token < c.vocab_size(),
          "component_step: invalid token id");
  return c.Step(state, prev_token, activate);
}

// ---------------------------------------------------------------------------

class WfstComponent : public Component {
 public:
  explicit WfstComponent(WfstModel model) : model_(std::move(model)) {}

  std::string type() const override { return "wfst"; }
  int vocab_size() const override { return model_.vocab_size; }
  const WfstModel& model() const { return model_; }

  ComponentState StartState() const override {
    return WfstStateSet{{{0, 0.0}}};
  }

  TokenLogDist Step(ComponentState* state, int prev_token,
                    bool activate) const override {
    auto& set = std::get<WfstStateSet>(*state);
    if (activate) {
      set = std::get<WfstStateSet>(StartState());
      prev_token = kBosId;
    }
    if (prev_token != kBosId) Advance(&set, prev_token);
    return Dist(set);
  }

  bool IsDead(const ComponentState& state) const {
    auto& set = std::get<WfstStateSet>(state);
    return set.states.size() == 1 && set.states[0].first == model_.dead_state;
  }

 private:
  void Advance(WfstStateSet* set, int token) const {
    std::vector<std::pair<int, double>> next;
    if (token != kUnkId) {
      std::map<int, double> acc;
      for (auto& [q, lw] : set->states) {
        int ai = model_.fst.FindArc(q, token);
        if (ai < 0) continue;
        const WfstArc& a = model_.fst.arcs[q][ai];
        auto it = acc.emplace(a.target, kNegInf).first;
        it->second = LogAddExp(it->second, lw - a.weight);
      }
      if (!acc.empty()) {
        double lse = kNegInf;
        for (auto& [q, lw] : acc) lse = LogAddExp(lse, lw);
        next.reserve(acc.size());
        for (auto& [q, lw] : acc) next.emplace_back(q, lw - lse);
      }
    }
    if (next.empty()) next.emplace_back(model_.dead_state, 0.0);
    set->states = std::move(next);
  }

  TokenLogDist Dist(const WfstStateSet& set) const {
    std::map<int, double> acc;
    for (auto& [q, lw] : set.states) {
      for (const auto& a : model_.fst.arcs[q]) {
        auto it = acc.emplace(a.label, kNegInf).first;
        it->second = LogAddExp(it->second, lw - a.weight);
      }
      double fw = model_.fst.final_weight[q];
      if (fw != kInfWeight) {
        auto it = acc.emplace(kEosId, kNegInf).first;
        it->second = LogAddExp(it->second, lw - fw);
      }
    }
    TokenLogDist d;
    d.entries.assign(acc.begin(), acc.end());
    return d;
  }

  WfstModel model_;
};

// ---------------------------------------------------------------------------

class LstmComponent : public Component {
 public:
  explicit LstmComponent(std::shared_ptr<const LstmLm> lm)
      : lm_(std::move(lm)) {}

  std::string type() const override { return "lstm"; }
  int vocab_size() const override { return lm_->vocab_size(); }
  const LstmLm& lm() const { return *lm_; }
  std::shared_ptr<const LstmLm> shared_lm() const { return lm_; }

  ComponentState StartState() const override { return lm_->InitState(1); }

  TokenLogDist Step(ComponentState* state, int prev_token,
                    bool activate) const override {
    auto& st = std::get<LstmLm::State>(*state);
    if (activate) {
      st = lm_->InitState(1);
      prev_token = kBosId;
    }
    Mat logits = lm_->StepLogits(&st, {prev_token});
    double m = logits.col(0).maxCoeff();
    double lse = m + std::log((logits.col(0).array() - m).exp().sum());
    TokenLogDist d;
    d.dense = true;
    d.dense_logp = logits.col(0).array() - lse;
    return d;
  }

 private:
  std::shared_ptr<const LstmLm> lm_;
};

}  // namespace complm
