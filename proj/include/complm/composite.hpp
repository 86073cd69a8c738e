// composite.hpp
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
// The compositional model: frozen components plus the learned glue — a
// context encoder over the default model's (frozen) input embeddings, one
// learnable embedding per component, a shared activation network applied
// per component, and a shared attention network whose softmax-normalized
// logits interpolate the component distributions per token.

#pragma once

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "complm/checkpoint.hpp"
#include "complm/component.hpp"
#include "complm/common.hpp"
#include "complm/lstm_lm.hpp"
#include "complm/optimizer.hpp"
#include "complm/params.hpp"
#include "complm/vocab.hpp"
#include "complm/wfst.hpp"

namespace complm {

struct CompositeConfig {
  int ctx_hidden = 256;
  int comp_emb_dim = 256;
  int act_hidden = 128;
  int act_layers = 2;
  int att_hidden = 128;
  double dropout = 0.2;
  // Floor applied to the log p(</s>) feature fed to the activation and
  // attention networks; WFST components emit exact zeros mid-phrase.
  double log_eos_floor = -20.0;

  int FeatureWidth() const { return ctx_hidden + comp_emb_dim + 2; }
};

// Per-token record of the forward step; rows of the trace export.
struct StepTrace {
  int position = 0;  // 1-based
  int token = 0;     // target w_t
  std::vector<double> pi;       // activation policy, 0 for i=0 / non-boundary
  std::vector<uint8_t> act;     // applied activation bits (i=0: its input bit)
  std::vector<double> att;      // attention logits
  std::vector<double> alpha;    // softmax of att
  std::vector<double> logp;     // per-component log p^i(w_t)
  double logp_composite = 0;
  double logp_default = 0;
};

struct RnnState {
  std::vector<Mat> h, c;
};

inline RnnState ZeroRnn(int layers, int hidden, int batch) {
  RnnState s;
  for (int l = 0; l < layers; ++l) {
    s.h.push_back(Mat::Zero(hidden, batch));
    s.c.push_back(Mat::Zero(hidden, batch));
  }
  return s;
}

struct CompositeState {
  RnnState ctx;
  struct PerComponent {
    ComponentState comp;
    RnnState act;  // unused for component 0
    RnnState att;
    double prev_act = 0.0;
    double prev_log_eos = 0.0;  // floored feature; 0 means "no open span"
  };
  std::vector<PerComponent> comps;
  int t = 0;  // positions consumed
};

class CompositeModel {
 public:
  CompositeModel(std::shared_ptr<const Vocabulary> vocab,
                 std::shared_ptr<const LstmLm> default_model,
                 std::vector<std::shared_ptr<const Component>> entity_components,
                 std::vector<std::string> entity_names, CompositeConfig cfg,
                 uint64_t seed)
      : vocab_(std::move(vocab)),
        default_lm_(std::move(default_model)),
        cfg_(cfg),
        seed_(seed) {
    Require(default_lm_->vocab_size() == vocab_->size(),
            "default model / vocabulary size mismatch", ErrorKind::kUsage);
    components_.push_back(std::make_shared<LstmComponent>(default_lm_));
    names_.push_back("default");
    for (size_t i = 0; i < entity_components.size(); ++i) {
      Require(entity_components[i]->vocab_size() == vocab_->size(),
              "component/vocab mismatch: " + entity_names[i],
              ErrorKind::kUsage);
      components_.push_back(entity_components[i]);
      names_.push_back(entity_names[i]);
    }

    const int n_all = int(components_.size());
    const int in = cfg_.FeatureWidth();
    Rng rng(seed_);
    Parameter& ctxw = params_.Add(
        "ctx.W", 4 * cfg_.ctx_hidden,
        default_lm_->config().emb_dim + cfg_.ctx_hidden, ParamPart::kTheta);
    InitUniform(ctxw, rng);
    Parameter& ctxb =
        params_.Add("ctx.b", 4 * cfg_.ctx_hidden, 1, ParamPart::kTheta);
    ctxb.value.middleRows(cfg_.ctx_hidden, cfg_.ctx_hidden).setConstant(1.0);

    Parameter& cemb =
        params_.Add("cemb", cfg_.comp_emb_dim, n_all, ParamPart::kTheta);
    InitUniform(cemb, rng);

    for (int l = 0; l < cfg_.act_layers; ++l) {
      int w_in = (l == 0) ? in : cfg_.act_hidden;
      Parameter& w = params_.Add(ActW(l), 4 * cfg_.act_hidden,
                                 w_in + cfg_.act_hidden, ParamPart::kZeta);
      InitUniform(w, rng);
      Parameter& b =
          params_.Add(ActB(l), 4 * cfg_.act_hidden, 1, ParamPart::kZeta);
      b.value.middleRows(cfg_.act_hidden, cfg_.act_hidden).setConstant(1.0);
    }
    Parameter& apw =
        params_.Add("act.proj.W", 1, cfg_.act_hidden, ParamPart::kZeta);
    InitUniform(apw, rng);
    params_.Add("act.proj.b", 1, 1, ParamPart::kZeta);

    Parameter& attw = params_.Add("att.l0.W", 4 * cfg_.att_hidden,
                                  in + cfg_.att_hidden, ParamPart::kTheta);
    InitUniform(attw, rng);
    Parameter& attb =
        params_.Add("att.l0.b", 4 * cfg_.att_hidden, 1, ParamPart::kTheta);
    attb.value.middleRows(cfg_.att_hidden, cfg_.att_hidden).setConstant(1.0);
    Parameter& tpw =
        params_.Add("att.proj.W", 1, cfg_.att_hidden, ParamPart::kTheta);
    InitUniform(tpw, rng);
    params_.Add("att.proj.b", 1, 1, ParamPart::kTheta);
  }

  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> shared_vocab() const { return vocab_; }
  const LstmLm& default_lm() const { return *default_lm_; }
  std::shared_ptr<const LstmLm> shared_default_lm() const { return default_lm_; }
  const CompositeConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  // component 0 is the default model
  int num_components() const { return int(components_.size()); }
  int num_entity_components() const { return num_components() - 1; }
  const Component& component(int i) const { return *components_[i]; }
  std::shared_ptr<const Component> shared_component(int i) const {
    return components_[i];
  }
  const std::string& component_name(int i) const { return names_[i]; }

  static std::string ActW(int l) { return "act.l" + std::to_string(l) + ".W"; }
  static std::string ActB(int l) { return "act.l" + std::to_string(l) + ".b"; }

  double FloorLogEos(double lp) const {
    return std::max(lp, cfg_.log_eos_floor);
  }

  CompositeState InitState() const {
    CompositeState s;
    s.ctx = ZeroRnn(1, cfg_.ctx_hidden, 1);
    s.comps.resize(components_.size());
    for (size_t i = 0; i < components_.size(); ++i) {
      s.comps[i].comp = components_[i]->StartState();
      s.comps[i].act = ZeroRnn(cfg_.act_layers, cfg_.act_hidden, 1);
      s.comps[i].att = ZeroRnn(1, cfg_.att_hidden, 1);
    }
    return s;
  }

  // Eq. 1: one step of the context encoder over the frozen embedding of
  // prev_token. Returns ctx_t (ctx_hidden x 1).
  Vec ContextStep(CompositeState* state, int prev_token) const {
    Require(prev_token >= 0 && prev_token < vocab_->size(),
            "context_step: invalid token");
    Mat x = default_lm_->embedding().col(prev_token);
    FrozenLstmCell(params_.Get("ctx.W").value, params_.Get("ctx.b").value, x,
                   &state->ctx.h[0], &state->ctx.c[0]);
    return state->ctx.h[0].col(0);
  }

  // Eq. 2 for component i >= 1; advances the activation LSTM and returns
  // pi. The caller is responsible for only invoking this at boundaries.
  double ActivationForward(CompositeState* state, int i, const Vec& ctx) const {
    Require(i >= 1 && i < num_components(),
            "activation_forward: the default model has no activation network");
    CompositeState::PerComponent& pc = state->comps[size_t(i)];
    Mat x = FeatureVec(ctx, i, pc.prev_act, pc.prev_log_eos);
    for (int l = 0; l < cfg_.act_layers; ++l) {
      FrozenLstmCell(params_.Get(ActW(l)).value, params_.Get(ActB(l)).value, x,
                     &pc.act.h[l], &pc.act.c[l]);
      x = pc.act.h[l];
    }
    double z = (params_.Get("act.proj.W").value * x)(0, 0) +
               params_.Get("act.proj.b").value(0, 0);
    return Sigmoid(z);
  }

  // Eq. 4; advances the attention LSTM for component i and returns the
  // raw attention logit.
  double AttentionForward(CompositeState* state, int i, const Vec& ctx,
                          double act_feature, double log_eos_feature) const {
    CompositeState::PerComponent& pc = state->comps[size_t(i)];
    Mat x = FeatureVec(ctx, i, act_feature, log_eos_feature);
    FrozenLstmCell(params_.Get("att.l0.W").value, params_.Get("att.l0.b").value,
                   x, &pc.att.h[0], &pc.att.c[0]);
    return (params_.Get("att.proj.W").value * pc.att.h[0])(0, 0) +
           params_.Get("att.proj.b").value(0, 0);
  }

  // One full forward step (Eq. 3). `acts` holds one bit per entity
  // component; bits may be set only where prev_token is a word boundary.
  // Returns the interpolated dense log-distribution over the vocabulary;
  // `dists_out`, when given, receives the per-component distributions.
  TokenLogDist Step(CompositeState* state, int prev_token,
                    const std::vector<uint8_t>& acts,
                    StepTrace* trace = nullptr,
                    std::vector<TokenLogDist>* dists_out = nullptr) const {
    Require(int(acts.size()) == num_components() - 1,
            "composite_step: need one activation bit per entity component");
    return StepImpl(
        state, prev_token,
        [&acts](const std::vector<double>&) { return acts; }, trace,
        dists_out);
  }

  // Threshold-mode step: act bits are pi >= 0.5 at boundaries.
  TokenLogDist StepThreshold(CompositeState* state, int prev_token,
                             StepTrace* trace = nullptr,
                             std::vector<TokenLogDist>* dists_out = nullptr) const {
    return StepImpl(
        state, prev_token,
        [](const std::vector<double>& pi) {
          std::vector<uint8_t> acts(pi.size() - 1, 0);
          for (size_t i = 1; i < pi.size(); ++i)
            acts[i - 1] = pi[i] >= 0.5 ? 1 : 0;
          return acts;
        },
        trace, dists_out);
  }

  enum class ActivationMode { kThreshold, kGiven };

  struct ScoreResult {
    double total_logp = 0;
    std::vector<StepTrace> traces;
  };

  // Scores w_1..w_L (with the implicit <s> prefix). In threshold mode the
  // activation bits are pi >= 0.5 computed on the fly at boundaries; in
  // given mode they come from `given` (one vector of bits per position).
  ScoreResult ScoreSequence(
      const TokenSeq& seq, ActivationMode mode,
      const std::vector<std::vector<uint8_t>>* given = nullptr) const {
    ValidateTokenSeq(*vocab_, seq);
    const int n_ent = num_entity_components();
    CompositeState state = InitState();
    ScoreResult res;
    std::vector<TokenLogDist> dists;
    int prev = kBosId;
    for (size_t t = 0; t < seq.ids.size(); ++t) {
      int target = seq.ids[t];
      StepTrace trace;
      TokenLogDist dist;
      if (mode == ActivationMode::kThreshold) {
        dist = StepThreshold(&state, prev, &trace, &dists);
      } else {
        Require(given && given->size() == seq.ids.size(),
                "score_sequence: missing activation bits");
        Require((*given)[t].size() == size_t(n_ent),
                "score_sequence: activation width mismatch");
        dist = Step(&state, prev, (*given)[t], &trace, &dists);
      }
      trace.token = target;
      trace.logp_composite = dist.LogProb(target);
      trace.logp.resize(size_t(num_components()));
      for (int i = 0; i < num_components(); ++i)
        trace.logp[size_t(i)] = dists[size_t(i)].LogProb(target);
      trace.logp_default = trace.logp[0];
      res.total_logp += trace.logp_composite;
      res.traces.push_back(std::move(trace));
      prev = target;
    }
    return res;
  }

  void Save(const std::string& path, long step_count,
            const Adam* opt = nullptr) const {
    std::ofstream os(path, std::ios::binary);
    Require(os.good(), "cannot write " + path);
    WriteCheckpointHeader(os, {"composite", step_count, seed_});
    WriteVocab(os, *vocab_);
    io::WriteU64(os, uint64_t(cfg_.ctx_hidden));
    io::WriteU64(os, uint64_t(cfg_.comp_emb_dim));
    io::WriteU64(os, uint64_t(cfg_.act_hidden));
    io::WriteU64(os, uint64_t(cfg_.act_layers));
    io::WriteU64(os, uint64_t(cfg_.att_hidden));
    io::WriteF64(os, cfg_.dropout);
    io::WriteF64(os, cfg_.log_eos_floor);
    io::WriteU64(os, seed_);
    default_lm_->Serialize(os);
    io::WriteU64(os, uint64_t(num_entity_components()));
    for (int i = 1; i < num_components(); ++i) {
      io::WriteString(os, components_[size_t(i)]->type());
      io::WriteString(os, names_[size_t(i)]);
      if (components_[size_t(i)]->type() == "wfst") {
        static_cast<const WfstComponent&>(*components_[size_t(i)])
            .model()
            .Serialize(os);
      } else {
        static_cast<const LstmComponent&>(*components_[size_t(i)])
            .lm()
            .Serialize(os);
      }
    }
    params_.Serialize(os);
    io::WriteU8(os, opt ? 1 : 0);
    if (opt) opt->Serialize(os);
  }

  struct Loaded {
    std::unique_ptr<CompositeModel> model;
    CheckpointHeader header;
    std::unique_ptr<Adam> optimizer;
  };

  static Loaded Load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    Require(is.good(), "cannot open " + path, ErrorKind::kUsage);
    Loaded out;
    out.header = ReadCheckpointHeader(is);
    Require(out.header.kind == "composite",
            "expected a composite checkpoint: " + path, ErrorKind::kUsage);
    auto vocab = std::make_shared<Vocabulary>(ReadVocab(is));
    CompositeConfig cfg;
    cfg.ctx_hidden = int(io::ReadU64(is));
    cfg.comp_emb_dim = int(io::ReadU64(is));
    cfg.act_hidden = int(io::ReadU64(is));
    cfg.act_layers = int(io::ReadU64(is));
    cfg.att_hidden = int(io::ReadU64(is));
    cfg.dropout = io::ReadF64(is);
    cfg.log_eos_floor = io::ReadF64(is);
    uint64_t seed = io::ReadU64(is);
    auto dflt = std::make_shared<LstmLm>(LstmLm::Deserialize(is));
    uint64_t n = io::ReadU64(is);
    std::vector<std::shared_ptr<const Component>> comps;
    std::vector<std::string> names;
    for (uint64_t i = 0; i < n; ++i) {
      std::string type = io::ReadString(is);
      names.push_back(io::ReadString(is));
      if (type == "wfst") {
        comps.push_back(
            std::make_shared<WfstComponent>(WfstModel::Deserialize(is)));
      } else if (type == "lstm") {
        comps.push_back(std::make_shared<LstmComponent>(
            std::make_shared<LstmLm>(LstmLm::Deserialize(is))));
      } else {
        throw Error(ErrorKind::kRuntime, "unknown component type: " + type);
      }
    }
    out.model = std::make_unique<CompositeModel>(vocab, dflt, comps, names,
                                                 cfg, seed);
    out.model->params_.DeserializeInto(is);
    if (io::ReadU8(is)) {
      out.optimizer = std::make_unique<Adam>();
      out.optimizer->Deserialize(is);
    }
    return out;
  }

  // Swaps entity component `i` (used for per-user personalization; the
  // learned embedding stays, only the frozen component changes).
  CompositeModel WithComponent(int i, std::shared_ptr<const Component> c) const {
    Require(i >= 1 && i < num_components(), "invalid component index");
    std::vector<std::shared_ptr<const Component>> ents;
    std::vector<std::string> names;
    for (int k = 1; k < num_components(); ++k) {
      ents.push_back(k == i ? c : components_[size_t(k)]);
      names.push_back(names_[size_t(k)]);
    }
    CompositeModel m(vocab_, default_lm_, ents, names, cfg_, seed_);
    for (size_t k = 0; k < params_.size(); ++k)
      m.params_.at(k).value = params_.at(k).value;
    return m;
  }

 private:
  template <typename ActsFn>
  TokenLogDist StepImpl(CompositeState* state, int prev_token, ActsFn acts_fn,
                        StepTrace* trace,
                        std::vector<TokenLogDist>* dists_out) const {
    const int n_all = num_components();
    const bool boundary = vocab_->IsWordBoundary(prev_token);

    state->t++;
    Vec ctx = ContextStep(state, prev_token);

    // activation policies; skipped (and reported 0) off word boundaries
    std::vector<double> pi(static_cast<size_t>(n_all), 0.0);
    if (boundary)
      for (int i = 1; i < n_all; ++i)
        pi[size_t(i)] = ActivationForward(state, i, ctx);

    std::vector<uint8_t> acts = acts_fn(pi);
    Require(acts.size() == size_t(n_all - 1),
            "composite_step: activation width mismatch");
    for (uint8_t a : acts)
      Require(!a || boundary,
              "composite_step: activation at a non-boundary position");

    // step all components, collect distributions
    std::vector<TokenLogDist> dists(static_cast<size_t>(n_all));
    for (int i = 0; i < n_all; ++i) {
      bool a = (i >= 1) && acts[size_t(i - 1)];
      dists[size_t(i)] = ComponentStep(
          *components_[size_t(i)], &state->comps[size_t(i)].comp, prev_token, a);
    }

    // attention over all components, including the default
    std::vector<double> att(static_cast<size_t>(n_all));
    std::vector<double> cur_eos(static_cast<size_t>(n_all));
    for (int i = 0; i < n_all; ++i) {
      double act_feat = (i == 0) ? (state->t == 1 ? 1.0 : 0.0)
                                 : double(acts[size_t(i - 1)]);
      cur_eos[size_t(i)] = FloorLogEos(dists[size_t(i)].LogEos());
      att[size_t(i)] = AttentionForward(state, i, ctx, act_feat, cur_eos[size_t(i)]);
    }
    std::vector<double> log_alpha(static_cast<size_t>(n_all));
    {
      double m = *std::max_element(att.begin(), att.end());
      double s = 0;
      for (double a : att) s += std::exp(a - m);
      double lse = m + std::log(s);
      for (int i = 0; i < n_all; ++i) log_alpha[size_t(i)] = att[size_t(i)] - lse;
    }

    // interpolate in log space; exact when only the default is present
    TokenLogDist out;
    out.dense = true;
    Require(dists[0].dense, "default distribution must be dense");
    out.dense_logp = dists[0].dense_logp.array() + log_alpha[0];
    for (int i = 1; i < n_all; ++i) {
      if (dists[size_t(i)].dense) {
        for (Eigen::Index w = 0; w < out.dense_logp.size(); ++w)
          out.dense_logp(w) = LogAddExp(
              out.dense_logp(w), log_alpha[size_t(i)] + dists[size_t(i)].dense_logp(w));
      } else {
        for (auto& [w, lp] : dists[size_t(i)].entries)
          out.dense_logp(w) =
              LogAddExp(out.dense_logp(w), log_alpha[size_t(i)] + lp);
      }
    }

    // inputs for the next step
    for (int i = 0; i < n_all; ++i) {
      CompositeState::PerComponent& pc = state->comps[size_t(i)];
      pc.prev_act = (i == 0) ? 0.0 : double(acts[size_t(i - 1)]);
      pc.prev_log_eos = cur_eos[size_t(i)];
    }

    if (trace) {
      trace->position = state->t;
      trace->pi = pi;
      trace->act.assign(size_t(n_all), 0);
      trace->act[0] = (state->t == 1) ? 1 : 0;
      for (int i = 1; i < n_all; ++i)
        trace->act[size_t(i)] = acts[size_t(i - 1)];
      trace->att = att;
      trace->alpha.resize(size_t(n_all));
      for (int i = 0; i < n_all; ++i)
        trace->alpha[size_t(i)] = std::exp(log_alpha[size_t(i)]);
    }
    if (dists_out) *dists_out = std::move(dists);
    return out;
  }

  Mat FeatureVec(const Vec& ctx, int i, double act_feat, double eos_feat) const {
    Mat x(cfg_.FeatureWidth(), 1);
    x.topRows(cfg_.ctx_hidden) = ctx;
    x.middleRows(cfg_.ctx_hidden, cfg_.comp_emb_dim) =
        params_.Get("cemb").value.col(i);
    x(cfg_.ctx_hidden + cfg_.comp_emb_dim, 0) = act_feat;
    x(cfg_.ctx_hidden + cfg_.comp_emb_dim + 1, 0) = eos_feat;
    return x;
  }

  std::shared_ptr<const Vocabulary> vocab_;
  std::shared_ptr<const LstmLm> default_lm_;
  std::vector<std::shared_ptr<const Component>> components_;
  std::vector<std::string> names_;
  CompositeConfig cfg_;
  uint64_t seed_;
  ParameterSet params_;
};

}  // namespace complm
