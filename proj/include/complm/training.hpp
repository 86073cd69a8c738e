// training.hpp
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
// Composite-model training: lookahead teacher policy, interpolated
// activation sampling, alternating cross-entropy (theta) and REINFORCE
// (zeta) updates over truncated-backpropagation chunks, and the two-phase
// schedule (teacher-only pretraining, then decayed-lambda main training).

#pragma once

#include <functional>
#include <iostream>
#include <memory>
#include <vector>

#include "complm/autodiff.hpp"
#include "complm/common.hpp"
#include "complm/component.hpp"
#include "complm/composite.hpp"
#include "complm/optimizer.hpp"
#include "complm/stream.hpp"
#include "complm/vocab.hpp"

namespace complm {

struct TrainingConfig {
  AdamConfig adam;  // lr 0.001, decay 0.7 per 1k updates, clip 5.0
  int updates_per_epoch = 800;
  int chunk_size = 16;
  int batch_size = 160;
  int pretrain_epochs = 5;
  int main_epochs = 20;
  double lambda_decay = 0.8;
  int lambda_decay_interval = 1000;  // updates per decay factor
  double lambda_floor = 0.05;        // below this, lambda snaps to 0
  int alternation_min = 1;
  int alternation_max = 3;
  bool disable_teacher = false;  // lambda == 0 from the start (ablation)
  uint64_t seed = 1;
};

// lambda(i) = decay^(i / interval) until it falls below the floor, then
// exactly 0. The index counts main-phase updates; pretraining pins 1.
inline double LambdaSchedule(long main_update_index, double decay = 0.8,
                             int interval = 1000, double floor = 0.05) {
  double lam = std::pow(decay, double(main_update_index) / double(interval));
  return lam < floor ? 0.0 : lam;
}

// ---------------------------------------------------------------------------
// Lookahead teacher

// b^i_t for every entity component at a word-boundary position t (0-based
// index into seq.ids). The ratio compares the component's probability of
// the next word (activated fresh at t) against the default model's;
// multi-subword words multiply the per-subword probabilities. b = r/(1+r).
inline std::vector<double> TeacherPolicy(
    const std::vector<std::shared_ptr<const Component>>& entity_components,
    const std::vector<double>& default_logp, const Vocabulary& vocab,
    const TokenSeq& seq, size_t t) {
  Require(t < seq.ids.size(), "teacher_policy: position out of range");
  int input = (t == 0) ? kBosId : seq.ids[t - 1];
  Require(vocab.IsWordBoundary(input),
          "teacher_policy: not a word-boundary position");
  // next word = subwords until the first boundary-closing token, inclusive
  size_t end = t;
  while (!vocab.IsWordBoundary(seq.ids[end])) ++end;

  std::vector<double> b;
  b.reserve(entity_components.size());
  double lp0 = 0;
  for (size_t j = t; j <= end; ++j) lp0 += default_logp[j];
  for (const auto& comp : entity_components) {
    ComponentState st = comp->StartState();
    double lpi = 0;
    for (size_t j = t; j <= end; ++j) {
      TokenLogDist d = ComponentStep(*comp, &st, j == t ? kBosId : seq.ids[j - 1],
                                     /*activate=*/j == t);
      lpi += d.LogProb(seq.ids[j]);
    }
    b.push_back(Sigmoid(lpi - lp0));
  }
  return b;
}

// Eq. 8 sampling: independent Bernoulli draws from
// pi_hat = lambda * b + (1 - lambda) * pi. Non-boundary positions return
// all zeros without consuming randomness.
inline std::vector<uint8_t> SampleActivations(const std::vector<double>& pi,
                                              const std::vector<double>& b,
                                              double lambda, bool boundary,
                                              Rng& rng) {
  Require(lambda >= 0.0 && lambda <= 1.0, "lambda out of range");
  Require(pi.size() == b.size(), "sample_activations: size mismatch");
  std::vector<uint8_t> acts(pi.size(), 0);
  if (!boundary) return acts;
  for (size_t i = 0; i < pi.size(); ++i) {
    double p = lambda * b[i] + (1.0 - lambda) * pi[i];
    std::bernoulli_distribution coin(p);
    acts[i] = coin(rng) ? 1 : 0;
  }
  return acts;
}

// ---------------------------------------------------------------------------
// Per-sentence caches (the default model and the teacher are frozen, so
// both are precomputed once per training run).

struct SentenceCaches {
  // [sentence][position]
  std::vector<std::vector<double>> logp0;    // log p^0(w_t | w_<t)
  std::vector<std::vector<double>> logeos0;  // log p^0(</s> | w_<t), raw
  // [sentence][component-1][position]; 0 off boundaries
  std::vector<std::vector<std::vector<double>>> teacher_b;
};

inline SentenceCaches BuildSentenceCaches(const CompositeModel& model,
                                          const std::vector<TokenSeq>& corpus,
                                          int batch = 64) {
  SentenceCaches caches;
  const size_t n = corpus.size();
  caches.logp0.resize(n);
  caches.logeos0.resize(n);
  caches.teacher_b.resize(n);
  for (size_t s = 0; s < n; ++s) {
    caches.logp0[s].assign(corpus[s].ids.size(), 0.0);
    caches.logeos0[s].assign(corpus[s].ids.size(), 0.0);
  }

  // batched default-model pass
  const LstmLm& lm = model.default_lm();
  InOrderUnitSource src(&corpus);
  SentenceStream stream(batch, [&src](StreamUnit* u) { return src(u); });
  LstmLm::State st = lm.InitState(batch);
  StreamStep step;
  while (stream.Next(&step)) {
    LstmLm::ZeroColumns(&st, step.fresh);
    Mat logits = lm.StepLogits(&st, step.input);
    for (int b = 0; b < batch; ++b) {
      if (!step.valid[size_t(b)]) continue;
      double m = logits.col(b).maxCoeff();
      double lse = m + std::log((logits.col(b).array() - m).exp().sum());
      int sent = step.unit_index[size_t(b)];
      int pos = step.pos[size_t(b)] - 1;
      caches.logp0[size_t(sent)][size_t(pos)] =
          logits(step.target[size_t(b)], b) - lse;
      caches.logeos0[size_t(sent)][size_t(pos)] = logits(kEosId, b) - lse;
    }
  }

  // teacher walks per boundary position
  std::vector<std::shared_ptr<const Component>> comps;
  for (int i = 1; i < model.num_components(); ++i)
    comps.push_back(model.shared_component(i));
  const Vocabulary& vocab = model.vocab();
  for (size_t s = 0; s < n; ++s) {
    const TokenSeq& seq = corpus[s];
    caches.teacher_b[s].assign(comps.size(),
                               std::vector<double>(seq.ids.size(), 0.0));
    for (size_t t = 0; t < seq.ids.size(); ++t) {
      int input = (t == 0) ? kBosId : seq.ids[t - 1];
      if (!vocab.IsWordBoundary(input)) continue;
      std::vector<double> b =
          TeacherPolicy(comps, caches.logp0[s], vocab, seq, t);
      for (size_t i = 0; i < comps.size(); ++i)
        caches.teacher_b[s][i][t] = b[i];
    }
  }
  return caches;
}

// ---------------------------------------------------------------------------
// Batched chunk forward

// Detached cross-chunk state for the lockstep batch.
struct TrainCarry {
  Mat ctx_h, ctx_c;                 // (ctx_hidden x B)
  std::vector<Mat> act_h, act_c;    // [(i-1) * act_layers + l]
  std::vector<Mat> att_h, att_c;    // [i], component 0 included
  std::vector<std::vector<ComponentState>> comp;  // [i-1][column]
  Mat prev_act;                     // (N x B)
  Mat prev_logeos;                  // (N+1 x B), floored features
};

inline TrainCarry InitTrainCarry(const CompositeModel& m, int batch) {
  const CompositeConfig& cfg = m.config();
  TrainCarry c;
  c.ctx_h = Mat::Zero(cfg.ctx_hidden, batch);
  c.ctx_c = Mat::Zero(cfg.ctx_hidden, batch);
  const int n_ent = m.num_entity_components();
  for (int i = 0; i < n_ent * cfg.act_layers; ++i) {
    c.act_h.push_back(Mat::Zero(cfg.act_hidden, batch));
    c.act_c.push_back(Mat::Zero(cfg.act_hidden, batch));
  }
  for (int i = 0; i < n_ent + 1; ++i) {
    c.att_h.push_back(Mat::Zero(cfg.att_hidden, batch));
    c.att_c.push_back(Mat::Zero(cfg.att_hidden, batch));
  }
  c.comp.resize(size_t(n_ent));
  for (int i = 0; i < n_ent; ++i)
    for (int b = 0; b < batch; ++b)
      c.comp[size_t(i)].push_back(m.component(i + 1).StartState());
  c.prev_act = Mat::Zero(n_ent, batch);
  c.prev_logeos = Mat::Zero(n_ent + 1, batch);
  return c;
}

// Chooses activation bits for one step given the policy values.
// pi[i-1][b]; returns bits[i-1][b]. Only called with boundary columns set.
using ActChooser = std::function<std::vector<std::vector<uint8_t>>(
    int step_index, const std::vector<uint8_t>& boundary,
    const std::vector<std::vector<double>>& pi)>;

struct ChunkStats {
  double ll_loss = 0;          // mean per-token negative log-likelihood
  double rl_loss = 0;
  double mean_reward = 0;
  double weight_total = 0;
  std::vector<std::vector<std::vector<uint8_t>>> acts;  // [step][i-1][b]
  std::vector<std::vector<std::vector<double>>> pi;     // [step][i-1][b]
  std::vector<Mat> rewards;                             // per step (1 x B)
};

class CompositeTrainer {
 public:
  CompositeTrainer(CompositeModel* model, const std::vector<TokenSeq>* train,
                   const SentenceCaches* caches, TrainingConfig cfg)
      : model_(model),
        train_(train),
        caches_(caches),
        cfg_(cfg),
        opt_(cfg.adam),
        source_(train, cfg.seed + 1, /*cycle=*/true),
        stream_(cfg.batch_size,
                [this](StreamUnit* u) { return source_(u); }),
        dropout_rng_(cfg.seed + 2),
        sample_rng_(cfg.seed + 3),
        alternation_rng_(cfg.seed + 4),
        carry_(InitTrainCarry(*model, cfg.batch_size)) {}

  Adam& optimizer() { return opt_; }
  const TrainingConfig& config() const { return cfg_; }
  long main_updates() const { return main_updates_; }

  // Builds the graph for one chunk and fills both loss nodes. Pure with
  // respect to the model parameters (reads them through the tape), so
  // finite-difference checks can replay it. `carry` is advanced in place.
  ChunkStats BuildChunkGraph(ad::Tape& tape, TrainCarry* carry,
                             const std::vector<StreamStep>& steps,
                             const ActChooser& choose, bool training,
                             ad::Var* ll_loss, ad::Var* rl_loss) {
    const CompositeConfig& ccfg = model_->config();
    const Vocabulary& vocab = model_->vocab();
    ParameterSet& params = model_->params();
    const int B = cfg_.batch_size;
    const int n_ent = model_->num_entity_components();
    const int n_all = n_ent + 1;

    ad::Var ctx_h = tape.Constant(carry->ctx_h);
    ad::Var ctx_c = tape.Constant(carry->ctx_c);
    std::vector<ad::Var> act_h, act_c, att_h, att_c;
    for (auto& m : carry->act_h) act_h.push_back(tape.Constant(m));
    for (auto& m : carry->act_c) act_c.push_back(tape.Constant(m));
    for (auto& m : carry->att_h) att_h.push_back(tape.Constant(m));
    for (auto& m : carry->att_c) att_c.push_back(tape.Constant(m));

    // per-component embedding columns, broadcast across the batch
    std::vector<ad::Var> cemb_b;
    for (int i = 0; i < n_all; ++i)
      cemb_b.push_back(tape.BroadcastCols(
          tape.GatherCols(tape.Param(params.Get("cemb")), {i}), B));

    ChunkStats stats;
    std::vector<ad::Var> ll_terms;   // weighted scalar per step
    std::vector<ad::Var> logprob_terms;  // RL pieces, one per (step, comp)
    std::vector<Mat> logprob_weights;    // filled after rewards are known
    std::vector<std::pair<int, int>> logprob_index;  // (step, comp)
    std::vector<Mat> step_weights;
    std::vector<std::vector<uint8_t>> step_fresh;

    const Mat& emb = model_->default_lm().embedding();

    for (size_t tau = 0; tau < steps.size(); ++tau) {
      const StreamStep& st = steps[tau];
      step_fresh.push_back(st.fresh);

      // column resets where a new sentence begins
      Eigen::RowVectorXd keep(B);
      for (int b = 0; b < B; ++b) keep(b) = st.fresh[size_t(b)] ? 0.0 : 1.0;
      bool any_fresh = false;
      for (int b = 0; b < B; ++b) any_fresh |= (st.fresh[size_t(b)] != 0);
      if (any_fresh) {
        ctx_h = tape.ScaleCols(ctx_h, keep);
        ctx_c = tape.ScaleCols(ctx_c, keep);
        for (auto& v : act_h) v = tape.ScaleCols(v, keep);
        for (auto& v : act_c) v = tape.ScaleCols(v, keep);
        for (auto& v : att_h) v = tape.ScaleCols(v, keep);
        for (auto& v : att_c) v = tape.ScaleCols(v, keep);
        for (int b = 0; b < B; ++b) {
          if (!st.fresh[size_t(b)]) continue;
          for (int i = 0; i < n_ent; ++i)
            carry->comp[size_t(i)][size_t(b)] =
                model_->component(i + 1).StartState();
          carry->prev_act.col(b).setZero();
          carry->prev_logeos.col(b).setZero();
        }
      }

      std::vector<uint8_t> boundary(size_t(B), 0);
      for (int b = 0; b < B; ++b) {
        Require(st.valid[size_t(b)] && st.unit_index[size_t(b)] >= 0,
                "composite training requires a cycling corpus stream");
        boundary[size_t(b)] = vocab.IsWordBoundary(st.input[size_t(b)]) ? 1 : 0;
      }
      Eigen::RowVectorXd bmask(B), bkeep(B);
      for (int b = 0; b < B; ++b) {
        bmask(b) = boundary[size_t(b)] ? 1.0 : 0.0;
        bkeep(b) = 1.0 - bmask(b);
      }

      // frozen embedding of the input tokens
      Mat x(emb.rows(), B);
      for (int b = 0; b < B; ++b) x.col(b) = emb.col(st.input[size_t(b)]);
      ad::Var xv = tape.Constant(std::move(x));

      // context encoder step (+ output dropout)
      auto ctx_step = ad::LstmStep(tape, params.Get("ctx.W"),
                                   params.Get("ctx.b"), xv, ctx_h, ctx_c);
      ctx_h = ctx_step.h;
      ctx_c = ctx_step.c;
      ad::Var ctx_out = ctx_h;
      if (training && ccfg.dropout > 0)
        ctx_out = tape.Dropout(ctx_out, ccfg.dropout, dropout_rng_);

      // activation networks (components 1..N); advance only at boundaries
      std::vector<ad::Var> z_nodes(static_cast<size_t>(n_ent));
      std::vector<std::vector<double>> pi(static_cast<size_t>(n_ent),
                                          std::vector<double>(size_t(B), 0.0));
      for (int i = 0; i < n_ent; ++i) {
        ad::Var prev_act_row = tape.Constant(carry->prev_act.row(i));
        ad::Var prev_eos_row = tape.Constant(carry->prev_logeos.row(i + 1));
        ad::Var inp = tape.ConcatRows(
            {ctx_out, cemb_b[size_t(i + 1)], prev_act_row, prev_eos_row});
        ad::Var cur = inp;
        for (int l = 0; l < ccfg.act_layers; ++l) {
          size_t k = size_t(i) * size_t(ccfg.act_layers) + size_t(l);
          auto hc = ad::LstmStep(tape, params.Get(CompositeModel::ActW(l)),
                                 params.Get(CompositeModel::ActB(l)), cur,
                                 act_h[k], act_c[k]);
          // keep the old state in non-boundary columns
          act_h[k] = tape.Add(tape.ScaleCols(hc.h, bmask),
                              tape.ScaleCols(act_h[k], bkeep));
          act_c[k] = tape.Add(tape.ScaleCols(hc.c, bmask),
                              tape.ScaleCols(act_c[k], bkeep));
          cur = hc.h;
          if (training && ccfg.dropout > 0 && l + 1 < ccfg.act_layers)
            cur = tape.Dropout(cur, ccfg.dropout, dropout_rng_);
        }
        ad::Var z = tape.Affine(tape.Param(params.Get("act.proj.W")),
                                tape.Param(params.Get("act.proj.b")), cur);
        z_nodes[size_t(i)] = z;
        const Mat& zv = tape.value(z);
        for (int b = 0; b < B; ++b)
          if (boundary[size_t(b)]) pi[size_t(i)][size_t(b)] = Sigmoid(zv(0, b));
      }

      // choose activation bits (sampled, thresholded, or given)
      std::vector<std::vector<uint8_t>> acts =
          choose(int(tau), boundary, pi);
      Require(acts.size() == size_t(n_ent), "act chooser width mismatch");

      // step entity components, collect per-column target/eos log-probs
      Mat logp_stack(n_all, B);
      Mat cur_eos(n_all, B);
      for (int b = 0; b < B; ++b) {
        int sent = st.unit_index[size_t(b)];
        int pos = st.pos[size_t(b)] - 1;
        logp_stack(0, b) = caches_->logp0[size_t(sent)][size_t(pos)];
        cur_eos(0, b) = model_->FloorLogEos(
            caches_->logeos0[size_t(sent)][size_t(pos)]);
      }
      for (int i = 0; i < n_ent; ++i) {
        const Component& comp = model_->component(i + 1);
        for (int b = 0; b < B; ++b) {
          bool a = acts[size_t(i)][size_t(b)] != 0;
          Require(!a || boundary[size_t(b)],
                  "activation sampled at a non-boundary position");
          TokenLogDist d = ComponentStep(
              comp, &carry->comp[size_t(i)][size_t(b)], st.input[size_t(b)], a);
          logp_stack(i + 1, b) = d.LogProb(st.target[size_t(b)]);
          cur_eos(i + 1, b) = model_->FloorLogEos(d.LogEos());
        }
      }

      // attention networks (all components) advance every step
      std::vector<ad::Var> att_logits;
      for (int i = 0; i < n_all; ++i) {
        Mat act_feat(1, B);
        for (int b = 0; b < B; ++b) {
          if (i == 0)
            act_feat(0, b) = (st.pos[size_t(b)] == 1) ? 1.0 : 0.0;
          else
            act_feat(0, b) = double(acts[size_t(i - 1)][size_t(b)]);
        }
        ad::Var inp_parts = tape.ConcatRows(
            {ctx_out, cemb_b[size_t(i)], tape.Constant(act_feat),
             tape.Constant(cur_eos.row(i))});
        ad::Var inp = inp_parts;
        if (training && ccfg.dropout > 0)
          inp = tape.Dropout(inp, ccfg.dropout, dropout_rng_);
        auto hc = ad::LstmStep(tape, params.Get("att.l0.W"),
                               params.Get("att.l0.b"), inp, att_h[size_t(i)],
                               att_c[size_t(i)]);
        att_h[size_t(i)] = hc.h;
        att_c[size_t(i)] = hc.c;
        ad::Var out = hc.h;
        if (training && ccfg.dropout > 0)
          out = tape.Dropout(out, ccfg.dropout, dropout_rng_);
        att_logits.push_back(tape.Affine(tape.Param(params.Get("att.proj.W")),
                                         tape.Param(params.Get("att.proj.b")),
                                         out));
      }

      // interpolation: log p = LSE_i(log alpha_i + log p_i) at the target
      ad::Var att_stack = tape.ConcatRows(att_logits);
      ad::Var log_alpha =
          tape.SubRowBroadcast(att_stack, tape.LseOverRows(att_stack));
      ad::Var composite_logp =
          tape.LseOverRows(tape.AddConst(log_alpha, logp_stack));

      // losses and rewards
      Mat w(1, B);
      for (int b = 0; b < B; ++b) w(0, b) = st.weight[size_t(b)];
      step_weights.push_back(w);
      stats.weight_total += w.sum();
      ll_terms.push_back(tape.WeightedSumAll(composite_logp, w));

      Mat reward(1, B);
      const Mat& clp = tape.value(composite_logp);
      for (int b = 0; b < B; ++b)
        reward(0, b) = (clp(0, b) - logp_stack(0, b)) * w(0, b);
      stats.rewards.push_back(reward);

      for (int i = 0; i < n_ent; ++i) {
        // log prob of the sampled bit: -softplus(-z) for 1, -softplus(z)
        // for 0; contributes only at boundary columns.
        Eigen::RowVectorXd on(B), off(B);
        for (int b = 0; b < B; ++b) {
          bool a = acts[size_t(i)][size_t(b)] != 0;
          on(b) = a ? 1.0 : 0.0;
          off(b) = a ? 0.0 : 1.0;
        }
        ad::Var z = z_nodes[size_t(i)];
        ad::Var lp = tape.Neg(
            tape.Add(tape.ScaleCols(tape.Softplus(tape.Neg(z)), on),
                     tape.ScaleCols(tape.Softplus(z), off)));
        logprob_terms.push_back(lp);
        logprob_index.emplace_back(int(tau), i);
        logprob_weights.emplace_back();  // placeholder until G is known
      }

      // next-step features
      for (int b = 0; b < B; ++b) {
        for (int i = 0; i < n_ent; ++i)
          carry->prev_act(i, b) = double(acts[size_t(i)][size_t(b)]);
        carry->prev_logeos.col(b) = cur_eos.col(b);
      }

      stats.acts.push_back(acts);
      stats.pi.push_back(pi);
    }

    // chunk-local returns, also cut at sentence ends
    const int B2 = cfg_.batch_size;
    std::vector<Mat> G(steps.size(), Mat::Zero(1, B2));
    for (int tau = int(steps.size()) - 1; tau >= 0; --tau) {
      G[size_t(tau)] = stats.rewards[size_t(tau)];
      if (tau + 1 < int(steps.size()))
        for (int b = 0; b < B2; ++b)
          if (!step_fresh[size_t(tau + 1)][size_t(b)])
            G[size_t(tau)](0, b) += G[size_t(tau + 1)](0, b);
    }
    for (size_t k = 0; k < logprob_terms.size(); ++k) {
      auto [tau, i] = logprob_index[k];
      (void)i;
      Mat gw(1, B2);
      for (int b = 0; b < B2; ++b) {
        bool bcol = vocab.IsWordBoundary(steps[size_t(tau)].input[size_t(b)]);
        gw(0, b) = bcol ? G[size_t(tau)](0, b) * step_weights[size_t(tau)](0, b)
                        : 0.0;
      }
      logprob_weights[k] = gw;
    }

    double wt = std::max(1.0, stats.weight_total);
    ad::Var ll_sum = ll_terms[0];
    for (size_t k = 1; k < ll_terms.size(); ++k)
      ll_sum = tape.Add(ll_sum, ll_terms[k]);
    *ll_loss = tape.MulScalar(ll_sum, -1.0 / wt);

    ad::Var rl_sum = tape.WeightedSumAll(logprob_terms[0], logprob_weights[0]);
    for (size_t k = 1; k < logprob_terms.size(); ++k)
      rl_sum = tape.Add(
          rl_sum, tape.WeightedSumAll(logprob_terms[k], logprob_weights[k]));
    *rl_loss = tape.MulScalar(rl_sum, -1.0 / wt);

    stats.ll_loss = tape.value(*ll_loss)(0, 0);
    stats.rl_loss = tape.value(*rl_loss)(0, 0);
    double rsum = 0;
    for (const Mat& r : stats.rewards) rsum += r.sum();
    stats.mean_reward = rsum / wt;

    carry->ctx_h = tape.value(ctx_h);
    carry->ctx_c = tape.value(ctx_c);
    for (size_t k = 0; k < act_h.size(); ++k) {
      carry->act_h[k] = tape.value(act_h[k]);
      carry->act_c[k] = tape.value(act_c[k]);
    }
    for (size_t k = 0; k < att_h.size(); ++k) {
      carry->att_h[k] = tape.value(att_h[k]);
      carry->att_c[k] = tape.value(att_c[k]);
    }
    return stats;
  }

  enum class LossKind { kLl, kRl };

  // One optimizer update over the next chunk. LL updates touch theta only,
  // RL updates zeta only.
  ChunkStats Update(LossKind kind, double lambda, bool training = true) {
    std::vector<StreamStep> steps;
    stream_.NextChunk(cfg_.chunk_size, &steps);
    Require(!steps.empty(), "empty training chunk");

    ActChooser choose = [this, lambda](int, const std::vector<uint8_t>& boundary,
                                       const std::vector<std::vector<double>>& pi)
        -> std::vector<std::vector<uint8_t>> {
      const int n_ent = int(pi.size());
      const int B = int(boundary.size());
      std::vector<std::vector<uint8_t>> acts(
          size_t(n_ent), std::vector<uint8_t>(size_t(B), 0));
      for (int b = 0; b < B; ++b) {
        if (!boundary[size_t(b)]) continue;
        std::vector<double> pib(static_cast<size_t>(n_ent));
        std::vector<double> bb(static_cast<size_t>(n_ent));
        for (int i = 0; i < n_ent; ++i) {
          pib[size_t(i)] = pi[size_t(i)][size_t(b)];
          bb[size_t(i)] = teacher_for_column_[size_t(b)][size_t(i)];
        }
        std::vector<uint8_t> bits =
            SampleActivations(pib, bb, lambda, true, sample_rng_);
        for (int i = 0; i < n_ent; ++i) acts[size_t(i)][size_t(b)] = bits[size_t(i)];
      }
      return acts;
    };

    // teacher values are looked up per column per step inside the chooser,
    // so refresh them step by step via a wrapper
    ad::Tape tape;
    ad::Var ll_loss, rl_loss;
    ChunkStats stats = BuildChunkGraphWithTeacher(tape, &carry_, steps, choose,
                                                  training, &ll_loss, &rl_loss);
    Require(std::isfinite(stats.ll_loss) && std::isfinite(stats.rl_loss),
            kind == LossKind::kLl ? "ll_update: non-finite loss"
                                  : "rl_update: non-finite loss");

    model_->params().ZeroGrads();
    if (kind == LossKind::kLl) {
      tape.Backward(ll_loss);
      opt_.Step(model_->params(),
                [](ParamPart p) { return p == ParamPart::kTheta; });
    } else {
      tape.Backward(rl_loss);
      opt_.Step(model_->params(),
                [](ParamPart p) { return p == ParamPart::kZeta; });
    }
    return stats;
  }

  // Exposed for tests: next chunk pulled from the stream.
  std::vector<StreamStep> PullChunk() {
    std::vector<StreamStep> steps;
    stream_.NextChunk(cfg_.chunk_size, &steps);
    return steps;
  }

 private:
  // Wraps BuildChunkGraph so the teacher lookup table tracks the stream
  // step currently being processed.
  ChunkStats BuildChunkGraphWithTeacher(ad::Tape& tape, TrainCarry* carry,
                                        const std::vector<StreamStep>& steps,
                                        const ActChooser& choose, bool training,
                                        ad::Var* ll_loss, ad::Var* rl_loss) {
    const int B = cfg_.batch_size;
    const int n_ent = model_->num_entity_components();
    ActChooser wrapped = [this, &steps, &choose, B, n_ent](
                             int tau, const std::vector<uint8_t>& boundary,
                             const std::vector<std::vector<double>>& pi) {
      teacher_for_column_.assign(size_t(B), std::vector<double>(size_t(n_ent), 0.0));
      const StreamStep& st = steps[size_t(tau)];
      for (int b = 0; b < B; ++b) {
        if (!boundary[size_t(b)]) continue;
        int sent = st.unit_index[size_t(b)];
        int pos = st.pos[size_t(b)] - 1;
        for (int i = 0; i < n_ent; ++i)
          teacher_for_column_[size_t(b)][size_t(i)] =
              caches_->teacher_b[size_t(sent)][size_t(i)][size_t(pos)];
      }
      return choose(tau, boundary, pi);
    };
    return BuildChunkGraph(tape, carry, steps, wrapped, training, ll_loss,
                           rl_loss);
  }

  CompositeModel* model_;
  const std::vector<TokenSeq>* train_;
  const SentenceCaches* caches_;
  TrainingConfig cfg_;
  Adam opt_;
  CorpusUnitSource source_;
  SentenceStream stream_;
  Rng dropout_rng_, sample_rng_, alternation_rng_;
  TrainCarry carry_;
  std::vector<std::vector<double>> teacher_for_column_;
  long main_updates_ = 0;

 public:
  // -------------------------------------------------------------------------
  // Full two-phase procedure

  struct EpochStats {
    std::string phase;
    int epoch = 0;
    long updates = 0;
    double lambda = 1.0;
    double lr = 0;
    double train_nll = 0;
    double dev_ppl = std::numeric_limits<double>::quiet_NaN();
  };

  struct RunResult {
    std::vector<EpochStats> epochs;
    int best_epoch = -1;
    double best_dev_ppl = std::numeric_limits<double>::infinity();
  };

  // Callback invoked after each epoch (checkpoint writing etc.).
  using EpochHook = std::function<void(const EpochStats&, bool is_best)>;

  RunResult Run(const std::vector<TokenSeq>* dev, std::ostream* log,
                const EpochHook& hook = EpochHook()) {
    RunResult res;
    std::vector<Mat> best_values;
    int epoch_counter = 0;
    LossKind run_kind = LossKind::kLl;
    int run_left = 0;

    auto RunEpoch = [&](const std::string& phase, bool pretrain) {
      epoch_counter++;
      double nll_sum = 0, nll_n = 0;
      double lambda = 1.0;
      for (int u = 0; u < cfg_.updates_per_epoch; ++u) {
        LossKind kind = LossKind::kLl;
        if (pretrain) {
          lambda = cfg_.disable_teacher ? 0.0 : 1.0;
        } else {
          lambda = cfg_.disable_teacher
                       ? 0.0
                       : LambdaSchedule(main_updates_, cfg_.lambda_decay,
                                        cfg_.lambda_decay_interval,
                                        cfg_.lambda_floor);
          if (run_left == 0) {
            std::uniform_int_distribution<int> d(cfg_.alternation_min,
                                                 cfg_.alternation_max);
            run_left = d(alternation_rng_);
            run_kind = (run_kind == LossKind::kLl) ? LossKind::kRl
                                                   : LossKind::kLl;
          }
          kind = run_kind;
          run_left--;
          main_updates_++;
        }
        ChunkStats st = Update(kind, lambda);
        nll_sum += st.ll_loss;
        nll_n += 1;
      }
      EpochStats es;
      es.phase = phase;
      es.epoch = epoch_counter;
      es.updates = opt_.step_count();
      es.lambda = lambda;
      es.lr = opt_.CurrentLr();
      es.train_nll = nll_sum / std::max(1.0, nll_n);
      bool is_best = false;
      if (dev && !dev->empty()) {
        double lp = 0;
        long n = 0;
        for (const TokenSeq& seq : *dev) {
          auto r = model_->ScoreSequence(
              seq, CompositeModel::ActivationMode::kThreshold);
          lp += r.total_logp;
          n += long(seq.ids.size());
        }
        es.dev_ppl = std::exp(-lp / double(n));
        if (es.dev_ppl < res.best_dev_ppl) {
          res.best_dev_ppl = es.dev_ppl;
          res.best_epoch = epoch_counter;
          is_best = true;
          best_values.clear();
          for (size_t i = 0; i < model_->params().size(); ++i)
            best_values.push_back(model_->params().at(i).value);
        }
      }
      if (log)
        (*log) << "phase " << es.phase << " epoch " << es.epoch << " updates "
               << es.updates << " lambda " << es.lambda << " lr " << es.lr
               << " train_nll " << es.train_nll << " dev_ppl " << es.dev_ppl
               << (is_best ? " *" : "") << "\n";
      res.epochs.push_back(es);
      if (hook) hook(es, is_best);
    };

    // Run-length draws start with the first main-phase batch; the first
    // draw flips run_kind, so seed it at RL to begin with LL.
    run_kind = LossKind::kRl;

    for (int e = 0; e < cfg_.pretrain_epochs; ++e) RunEpoch("pretrain", true);
    for (int e = 0; e < cfg_.main_epochs; ++e) RunEpoch("main", false);

    if (!best_values.empty())
      for (size_t i = 0; i < model_->params().size(); ++i)
        model_->params().at(i).value = best_values[i];
    return res;
  }
};

}  // namespace complm
