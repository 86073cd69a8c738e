// lstm_lm.hpp
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
// LSTM language model over the shared subword vocabulary: input embedding,
// stacked LSTM layers, an optional skip connection adding the input
// embedding to the top hidden state, and a softmax output layer. Doubles
// as the default model and, trained with random-tail augmentation, as an
// entity-type component.

#pragma once

#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "complm/autodiff.hpp"
#include "complm/common.hpp"
#include "complm/optimizer.hpp"
#include "complm/params.hpp"
#include "complm/stream.hpp"
#include "complm/vocab.hpp"

namespace complm {

struct LstmLmConfig {
  int emb_dim = 300;
  int hidden = 300;
  int layers = 2;
  double dropout = 0.2;       // between LSTM layers, training only
  bool skip_connection = true;  // top hidden + input embedding
};

// One LSTM cell update on plain matrices (inference path). Gate layout
// matches ad::LstmStep: rows [i; f; g; o], W applied to [x; h].
inline void FrozenLstmCell(const Mat& w, const Mat& b, const Mat& x, Mat* h,
                           Mat* c) {
  const int hidden = int(b.rows()) / 4;
  Mat z(x.rows() + hidden, x.cols());
  z.topRows(x.rows()) = x;
  z.bottomRows(hidden) = *h;
  Mat gates = (w * z).colwise() + Vec(b.col(0));
  auto sig = [](double v) { return complm::Sigmoid(v); };
  Mat gi = gates.topRows(hidden).unaryExpr(sig);
  Mat gf = gates.middleRows(hidden, hidden).unaryExpr(sig);
  Mat gg = gates.middleRows(2 * hidden, hidden).array().tanh();
  Mat go = gates.middleRows(3 * hidden, hidden).unaryExpr(sig);
  *c = gf.cwiseProduct(*c) + gi.cwiseProduct(gg);
  *h = go.cwiseProduct(c->array().tanh().matrix());
}

// Gate row layout is [i; f; g; o]; forget-gate biases start at +1.
class LstmLm {
 public:
  struct State {
    std::vector<Mat> h, c;  // per layer, (hidden x batch)
  };

  LstmLm(LstmLmConfig cfg, int vocab_size, uint64_t seed)
      : cfg_(cfg), vocab_size_(vocab_size), seed_(seed) {
    Require(vocab_size_ > 3, "vocabulary too small");
    if (cfg_.skip_connection)
      Require(cfg_.emb_dim == cfg_.hidden,
              "skip connection requires emb_dim == hidden");
    Rng rng(seed);
    Parameter& emb = params_.Add("emb", cfg_.emb_dim, vocab_size_);
    InitUniform(emb, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      int in = (l == 0) ? cfg_.emb_dim : cfg_.hidden;
      Parameter& w = params_.Add(LayerW(l), 4 * cfg_.hidden, in + cfg_.hidden);
      InitUniform(w, rng);
      Parameter& b = params_.Add(LayerB(l), 4 * cfg_.hidden, 1);
      b.value.middleRows(cfg_.hidden, cfg_.hidden).setConstant(1.0);
    }
    Parameter& ow = params_.Add("out.W", vocab_size_, cfg_.hidden);
    InitUniform(ow, rng);
    params_.Add("out.b", vocab_size_, 1);
  }

  const LstmLmConfig& config() const { return cfg_; }
  int vocab_size() const { return vocab_size_; }
  uint64_t seed() const { return seed_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const Mat& embedding() const { return params_.Get("emb").value; }

  State InitState(int batch) const {
    State s;
    for (int l = 0; l < cfg_.layers; ++l) {
      s.h.push_back(Mat::Zero(cfg_.hidden, batch));
      s.c.push_back(Mat::Zero(cfg_.hidden, batch));
    }
    return s;
  }

  static void ZeroColumns(State* s, const std::vector<uint8_t>& reset) {
    for (auto& m : s->h)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (reset[size_t(j)]) m.col(j).setZero();
    for (auto& m : s->c)
      for (Eigen::Index j = 0; j < m.cols(); ++j)
        if (reset[size_t(j)]) m.col(j).setZero();
  }

  // Frozen batched step: consumes one token per column, returns raw output
  // logits (V x B). No dropout.
  Mat StepLogits(State* st, const std::vector<int>& tokens) const {
    const Mat& emb = embedding();
    Mat x(cfg_.emb_dim, Eigen::Index(tokens.size()));
    for (size_t j = 0; j < tokens.size(); ++j) {
      Require(tokens[j] >= 0 && tokens[j] < vocab_size_, "token out of range");
      x.col(Eigen::Index(j)) = emb.col(tokens[j]);
    }
    Mat inp = x;
    for (int l = 0; l < cfg_.layers; ++l) {
      FrozenLstmCell(params_.Get(LayerW(l)).value, params_.Get(LayerB(l)).value,
                     inp, &st->h[l], &st->c[l]);
      inp = st->h[l];
    }
    if (cfg_.skip_connection) inp += x;
    Mat logits = (params_.Get("out.W").value * inp).colwise() +
                 Vec(params_.Get("out.b").value.col(0));
    return logits;
  }

  // Graph step for training; advances h/c vars in place and returns logits.
  ad::Var StepGraphLogits(ad::Tape& t, std::vector<ad::Var>* h,
                          std::vector<ad::Var>* c,
                          const std::vector<int>& tokens, bool training,
                          Rng& rng) {
    ad::Var x = t.GatherCols(t.Param(params_.Get("emb")), tokens);
    ad::Var inp = x;
    for (int l = 0; l < cfg_.layers; ++l) {
      auto hc = ad::LstmStep(t, params_.Get(LayerW(l)), params_.Get(LayerB(l)),
                             inp, (*h)[l], (*c)[l]);
      (*h)[l] = hc.h;
      (*c)[l] = hc.c;
      inp = hc.h;
      if (training && cfg_.dropout > 0 && l + 1 < cfg_.layers)
        inp = t.Dropout(inp, cfg_.dropout, rng);
    }
    if (cfg_.skip_connection) inp = t.Add(inp, x);
    return t.Affine(t.Param(params_.Get("out.W")),
                    t.Param(params_.Get("out.b")), inp);
  }

  // Per-sentence log-likelihood; fills per-position log p(w_t) and, when
  // asked, log p(</s>) at each position.
  double ScoreSentence(const TokenSeq& seq, std::vector<double>* logp = nullptr,
                       std::vector<double>* log_eos = nullptr) const {
    State st = InitState(1);
    int prev = kBosId;
    double total = 0;
    if (logp) logp->clear();
    if (log_eos) log_eos->clear();
    for (int target : seq.ids) {
      Mat logits = StepLogits(&st, {prev});
      double m = logits.col(0).maxCoeff();
      double lse = m + std::log((logits.col(0).array() - m).exp().sum());
      double lp = logits(target, 0) - lse;
      total += lp;
      if (logp) logp->push_back(lp);
      if (log_eos) log_eos->push_back(logits(kEosId, 0) - lse);
      prev = target;
    }
    return total;
  }

  void Serialize(std::ostream& os) const {
    io::WriteU64(os, uint64_t(vocab_size_));
    io::WriteU64(os, seed_);
    io::WriteU64(os, uint64_t(cfg_.emb_dim));
    io::WriteU64(os, uint64_t(cfg_.hidden));
    io::WriteU64(os, uint64_t(cfg_.layers));
    io::WriteF64(os, cfg_.dropout);
    io::WriteU8(os, cfg_.skip_connection ? 1 : 0);
    params_.Serialize(os);
  }

  static LstmLm Deserialize(std::istream& is) {
    uint64_t vocab = io::ReadU64(is);
    uint64_t seed = io::ReadU64(is);
    LstmLmConfig cfg;
    cfg.emb_dim = int(io::ReadU64(is));
    cfg.hidden = int(io::ReadU64(is));
    cfg.layers = int(io::ReadU64(is));
    cfg.dropout = io::ReadF64(is);
    cfg.skip_connection = io::ReadU8(is) != 0;
    LstmLm lm(cfg, int(vocab), seed);
    lm.params_.DeserializeInto(is);
    return lm;
  }

  static std::string LayerW(int l) { return "lstm" + std::to_string(l) + ".W"; }
  static std::string LayerB(int l) { return "lstm" + std::to_string(l) + ".b"; }

 private:
  LstmLmConfig cfg_;
  int vocab_size_;
  uint64_t seed_;
  ParameterSet params_;
};

// ---------------------------------------------------------------------------
// Training

struct LmTrainConfig {
  LstmLmConfig model;
  AdamConfig adam;
  int batch = 160;
  int chunk = 16;
  int updates_per_epoch = 800;
  int epochs = 10;
  double aug_ratio = 0.0;  // random-tail units for entity-type components
  uint64_t seed = 1;
};

struct LmEpochStats {
  int epoch = 0;
  long updates = 0;
  double lr = 0;
  double train_nll = 0;
  double dev_ppl = 0;  // NaN when no dev set
};

// Batched perplexity used for dev tracking inside training loops. Final
// reported perplexities go through the per-sentence scorer instead.
inline double LmPerplexityBatched(const LstmLm& lm,
                                  const std::vector<TokenSeq>& corpus,
                                  int batch = 64) {
  Require(!corpus.empty(), "perplexity: empty corpus", ErrorKind::kUsage);
  InOrderUnitSource src(&corpus);
  SentenceStream stream(batch, [&src](StreamUnit* u) { return src(u); });
  LstmLm::State st = lm.InitState(batch);
  StreamStep step;
  double total_lp = 0;
  double total_n = 0;
  while (stream.Next(&step)) {
    LstmLm::ZeroColumns(&st, step.fresh);
    Mat logits = lm.StepLogits(&st, step.input);
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
      if (!step.valid[size_t(j)] || step.weight[size_t(j)] == 0) continue;
      double m = logits.col(j).maxCoeff();
      double lse = m + std::log((logits.col(j).array() - m).exp().sum());
      total_lp += (logits(step.target[size_t(j)], j) - lse) * step.weight[size_t(j)];
      total_n += step.weight[size_t(j)];
    }
  }
  return std::exp(-total_lp / total_n);
}

inline LstmLm TrainLstmLm(const std::vector<TokenSeq>& train,
                          const std::vector<TokenSeq>* dev, int vocab_size,
                          const LmTrainConfig& cfg,
                          std::vector<LmEpochStats>* stats = nullptr,
                          std::ostream* log = nullptr) {
  Require(!train.empty(), "train_lstm_lm: empty corpus", ErrorKind::kUsage);
  LstmLm lm(cfg.model, vocab_size, cfg.seed);
  Adam opt(cfg.adam);
  Rng rng(cfg.seed + 0x9e3779b97f4a7c15ull);

  CorpusUnitSource src(&train, cfg.seed + 1, /*cycle=*/true, cfg.aug_ratio,
                       vocab_size);
  SentenceStream stream(cfg.batch, [&src](StreamUnit* u) { return src(u); });

  LstmLm::State carry = lm.InitState(cfg.batch);
  std::vector<StreamStep> steps;

  double best_dev = std::numeric_limits<double>::infinity();
  std::vector<Mat> best_values;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double nll_sum = 0;
    double nll_n = 0;
    double last_lr = opt.CurrentLr();
    for (int u = 0; u < cfg.updates_per_epoch; ++u) {
      stream.NextChunk(cfg.chunk, &steps);
      ad::Tape tape;
      std::vector<ad::Var> h, c;
      for (int l = 0; l < cfg.model.layers; ++l) {
        h.push_back(tape.Constant(carry.h[l]));
        c.push_back(tape.Constant(carry.c[l]));
      }
      std::vector<ad::Var> losses;
      double weight_total = 0;
      for (const StreamStep& st : steps) {
        Eigen::RowVectorXd keep(cfg.batch);
        for (int b = 0; b < cfg.batch; ++b)
          keep(b) = st.fresh[size_t(b)] ? 0.0 : 1.0;
        for (int l = 0; l < cfg.model.layers; ++l) {
          h[size_t(l)] = tape.ScaleCols(h[size_t(l)], keep);
          c[size_t(l)] = tape.ScaleCols(c[size_t(l)], keep);
        }
        ad::Var logits = lm.StepGraphLogits(tape, &h, &c, st.input, true, rng);
        ad::Var logp = tape.LogSoftmaxCols(logits);
        ad::Var picked = tape.PickRowPerCol(logp, st.target);
        Mat w(1, cfg.batch);
        for (int b = 0; b < cfg.batch; ++b)
          w(0, b) = st.weight[size_t(b)] * (st.valid[size_t(b)] ? 1.0 : 0.0);
        weight_total += w.sum();
        losses.push_back(tape.WeightedSumAll(picked, w));
      }
      ad::Var total = losses[0];
      for (size_t i = 1; i < losses.size(); ++i)
        total = tape.Add(total, losses[i]);
      ad::Var loss = tape.MulScalar(total, -1.0 / std::max(1.0, weight_total));
      double loss_val = tape.value(loss)(0, 0);
      Require(std::isfinite(loss_val), "train_lstm_lm: non-finite loss");
      lm.params().ZeroGrads();
      tape.Backward(loss);
      last_lr = opt.StepAll(lm.params());
      nll_sum += loss_val;
      nll_n += 1;
      for (int l = 0; l < cfg.model.layers; ++l) {
        carry.h[l] = tape.value(h[size_t(l)]);
        carry.c[l] = tape.value(c[size_t(l)]);
      }
    }
    LmEpochStats es;
    es.epoch = epoch;
    es.updates = opt.step_count();
    es.lr = last_lr;
    es.train_nll = nll_sum / std::max(1.0, nll_n);
    es.dev_ppl = std::numeric_limits<double>::quiet_NaN();
    if (dev && !dev->empty()) {
      es.dev_ppl = LmPerplexityBatched(lm, *dev);
      if (es.dev_ppl < best_dev) {
        best_dev = es.dev_ppl;
        best_values.clear();
        for (size_t i = 0; i < lm.params().size(); ++i)
          best_values.push_back(lm.params().at(i).value);
      }
    }
    if (stats) stats->push_back(es);
    if (log)
      (*log) << "epoch " << es.epoch << " updates " << es.updates << " lr "
             << es.lr << " train_nll " << es.train_nll << " dev_ppl "
             << es.dev_ppl << "\n";
  }
  if (!best_values.empty())
    for (size_t i = 0; i < lm.params().size(); ++i)
      lm.params().at(i).value = best_values[i];
  return lm;
}

}  // namespace complm
