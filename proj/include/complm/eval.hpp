// eval.hpp
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
// Evaluation: perplexity, per-sentence log-likelihood comparison, WER with
// Levenshtein alignment, and n-best rescoring with optional per-user
// entity components. All evaluation is inference mode: dropout off,
// threshold activations at 0.5, frozen parameters.

#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "complm/common.hpp"
#include "complm/component.hpp"
#include "complm/composite.hpp"
#include "complm/lstm_lm.hpp"
#include "complm/vocab.hpp"
#include "complm/wfst.hpp"

namespace complm {

// Static partition parallel-for; results must be written to per-index
// slots so output order stays deterministic.
template <typename Fn>
void ParallelFor(size_t n, int threads, Fn fn) {
  threads = std::max(1, threads);
  if (threads == 1 || n <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([t, threads, n, &fn]() {
      for (size_t i = size_t(t); i < n; i += size_t(threads)) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

// exp(-sum log p / count); </s> counted, <s> not.
inline double LmPerplexity(const LstmLm& lm, const std::vector<TokenSeq>& corpus,
                           int threads = 1) {
  Require(!corpus.empty(), "perplexity: empty corpus", ErrorKind::kUsage);
  std::vector<double> lls(corpus.size());
  std::vector<long> counts(corpus.size());
  ParallelFor(corpus.size(), threads, [&](size_t i) {
    lls[i] = lm.ScoreSentence(corpus[i]);
    counts[i] = long(corpus[i].ids.size());
  });
  double lp = 0;
  long n = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    lp += lls[i];
    n += counts[i];
  }
  return std::exp(-lp / double(n));
}

inline double CompositePerplexity(const CompositeModel& m,
                                  const std::vector<TokenSeq>& corpus,
                                  int threads = 1) {
  Require(!corpus.empty(), "perplexity: empty corpus", ErrorKind::kUsage);
  std::vector<double> lls(corpus.size());
  std::vector<long> counts(corpus.size());
  ParallelFor(corpus.size(), threads, [&](size_t i) {
    lls[i] =
        m.ScoreSequence(corpus[i], CompositeModel::ActivationMode::kThreshold)
            .total_logp;
    counts[i] = long(corpus[i].ids.size());
  });
  double lp = 0;
  long n = 0;
  for (size_t i = 0; i < corpus.size(); ++i) {
    lp += lls[i];
    n += counts[i];
  }
  return std::exp(-lp / double(n));
}

// ---------------------------------------------------------------------------
// Per-sentence log-likelihood comparison (the scatter-plot data).

struct SentenceLl {
  std::string text;
  double ll_composite = 0;
  double ll_default = 0;
  double Gap() const { return ll_composite - ll_default; }
};

struct LoglikCompareOptions {
  double min_gap = 0.0;  // drop rows with |gap| < min_gap
  int max_len = 0;       // keep sentences with at most this many tokens; 0 = all
  int threads = 1;
};

inline std::vector<SentenceLl> LoglikCompare(
    const CompositeModel& composite, const LstmLm& default_lm,
    const Vocabulary& vocab, const std::vector<std::string>& sentences,
    LoglikCompareOptions opt = LoglikCompareOptions()) {
  std::vector<SentenceLl> rows(sentences.size());
  std::vector<uint8_t> keep(sentences.size(), 1);
  ParallelFor(sentences.size(), opt.threads, [&](size_t i) {
    TokenSeq seq = vocab.Encode(sentences[i]);
    if (opt.max_len > 0 && int(seq.ids.size()) > opt.max_len) {
      keep[i] = 0;
      return;
    }
    rows[i].text = sentences[i];
    rows[i].ll_composite =
        composite
            .ScoreSequence(seq, CompositeModel::ActivationMode::kThreshold)
            .total_logp;
    rows[i].ll_default = default_lm.ScoreSentence(seq);
  });
  std::vector<SentenceLl> out;
  for (size_t i = 0; i < rows.size(); ++i) {
    if (!keep[i]) continue;
    if (opt.min_gap > 0 && std::abs(rows[i].Gap()) < opt.min_gap) continue;
    out.push_back(rows[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Word error rate

struct WerStats {
  long sub = 0, ins = 0, del = 0, ref_words = 0;
  long Errors() const { return sub + ins + del; }
  double Wer() const {
    return ref_words == 0 ? 0.0 : double(Errors()) / double(ref_words);
  }
  WerStats& operator+=(const WerStats& o) {
    sub += o.sub;
    ins += o.ins;
    del += o.del;
    ref_words += o.ref_words;
    return *this;
  }
};

// Levenshtein alignment with unit costs; backtrace prefers diagonal moves
// so ties resolve deterministically.
inline WerStats WerAlign(const std::vector<std::string>& ref,
                         const std::vector<std::string>& hyp) {
  Require(!ref.empty(), "wer: empty reference", ErrorKind::kUsage);
  const size_t R = ref.size(), H = hyp.size();
  std::vector<int> dist((R + 1) * (H + 1));
  auto at = [&](size_t i, size_t j) -> int& { return dist[i * (H + 1) + j]; };
  for (size_t i = 0; i <= R; ++i) at(i, 0) = int(i);
  for (size_t j = 0; j <= H; ++j) at(0, j) = int(j);
  for (size_t i = 1; i <= R; ++i)
    for (size_t j = 1; j <= H; ++j) {
      int s = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      int d = at(i - 1, j) + 1;
      int n = at(i, j - 1) + 1;
      at(i, j) = std::min(s, std::min(d, n));
    }
  WerStats w;
  w.ref_words = long(R);
  size_t i = R, j = H;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 &&
        at(i, j) == at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1)) {
      if (ref[i - 1] != hyp[j - 1]) w.sub++;
      --i;
      --j;
    } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      w.del++;
      --i;
    } else {
      w.ins++;
      --j;
    }
  }
  return w;
}

inline WerStats WerAlign(const std::string& ref, const std::string& hyp) {
  return WerAlign(SplitWhitespace(ref), SplitWhitespace(hyp));
}

// ---------------------------------------------------------------------------
// N-best lists

struct NBestEntry {
  std::string utt_id;
  int rank = 0;
  double first_pass = 0;
  std::string text;
  std::string user_id;  // optional
};

struct NBestUtterance {
  std::string utt_id;
  std::string user_id;
  std::vector<NBestEntry> hyps;  // sorted by rank, dense from 1
};

// TSV: utt_id <TAB> rank <TAB> first_pass_score <TAB> text [<TAB> user_id]
inline std::vector<NBestUtterance> ReadNBest(const std::string& path) {
  std::vector<NBestUtterance> utts;
  std::map<std::string, size_t> index;
  for (const std::string& line : ReadLines(path)) {
    if (line.empty()) continue;
    std::vector<std::string> f = SplitChar(line, '\t');
    Require(f.size() >= 4, "nbest: bad line: " + line, ErrorKind::kUsage);
    NBestEntry e;
    e.utt_id = f[0];
    e.rank = std::stoi(f[1]);
    e.first_pass = std::stod(f[2]);
    e.text = f[3];
    if (f.size() >= 5) e.user_id = f[4];
    auto it = index.find(e.utt_id);
    if (it == index.end()) {
      index[e.utt_id] = utts.size();
      utts.push_back({e.utt_id, e.user_id, {}});
    }
    utts[index[e.utt_id]].hyps.push_back(std::move(e));
  }
  for (auto& u : utts) {
    std::sort(u.hyps.begin(), u.hyps.end(),
              [](const NBestEntry& a, const NBestEntry& b) {
                return a.rank < b.rank;
              });
    Require(!u.hyps.empty(), "nbest: empty utterance " + u.utt_id);
    for (size_t r = 0; r < u.hyps.size(); ++r)
      Require(u.hyps[r].rank == int(r) + 1,
              "nbest: ranks not dense for " + u.utt_id, ErrorKind::kUsage);
  }
  return utts;
}

// TSV: utt_id <TAB> reference text
inline std::map<std::string, std::string> ReadRefs(const std::string& path) {
  std::map<std::string, std::string> refs;
  for (const std::string& line : ReadLines(path)) {
    if (line.empty()) continue;
    std::vector<std::string> f = SplitChar(line, '\t');
    Require(f.size() >= 2, "refs: bad line: " + line, ErrorKind::kUsage);
    refs[f[0]] = f[1];
  }
  return refs;
}

// ---------------------------------------------------------------------------
// Rescoring

class CompositeScorer {
 public:
  virtual ~CompositeScorer() = default;
  virtual double Score(const std::string& text) const = 0;
};

class CompositeLmScorer : public CompositeScorer {
 public:
  explicit CompositeLmScorer(const CompositeModel* m) : m_(m) {}
  double Score(const std::string& text) const override {
    TokenSeq seq = m_->vocab().Encode(text);
    return m_
        ->ScoreSequence(seq, CompositeModel::ActivationMode::kThreshold)
        .total_logp;
  }

 private:
  const CompositeModel* m_;
};

class DefaultLmScorer : public CompositeScorer {
 public:
  DefaultLmScorer(const LstmLm* lm, const Vocabulary* vocab)
      : lm_(lm), vocab_(vocab) {}
  double Score(const std::string& text) const override {
    return lm_->ScoreSentence(vocab_->Encode(text));
  }

 private:
  const LstmLm* lm_;
  const Vocabulary* vocab_;
};

struct RescoreChoice {
  std::string utt_id;
  int chosen_rank = 1;
  std::string chosen_text;
};

// combined = weight * lm + (1 - weight) * first_pass; ties break toward
// the lower first-pass rank.
inline std::vector<RescoreChoice> RescoreNBest(
    const CompositeScorer& scorer, const std::vector<NBestUtterance>& utts,
    double weight, int threads = 1) {
  Require(weight >= 0.0 && weight <= 1.0, "rescore: weight must be in [0,1]",
          ErrorKind::kUsage);
  std::vector<RescoreChoice> out(utts.size());
  ParallelFor(utts.size(), threads, [&](size_t i) {
    const NBestUtterance& u = utts[i];
    double best = -std::numeric_limits<double>::infinity();
    size_t best_k = 0;
    for (size_t k = 0; k < u.hyps.size(); ++k) {
      double lm = (weight > 0.0) ? scorer.Score(u.hyps[k].text) : 0.0;
      double s = weight * lm + (1.0 - weight) * u.hyps[k].first_pass;
      if (s > best) {
        best = s;
        best_k = k;
      }
    }
    out[i] = {u.utt_id, u.hyps[best_k].rank, u.hyps[best_k].text};
  });
  return out;
}

inline WerStats WerOfChoices(const std::vector<RescoreChoice>& choices,
                             const std::map<std::string, std::string>& refs) {
  WerStats total;
  for (const auto& c : choices) {
    auto it = refs.find(c.utt_id);
    Require(it != refs.end(), "missing reference for " + c.utt_id,
            ErrorKind::kUsage);
    total += WerAlign(it->second, c.chosen_text);
  }
  return total;
}

// Lowest-WER hypothesis per utterance (ties toward lower rank).
inline WerStats OracleWer(const std::vector<NBestUtterance>& utts,
                          const std::map<std::string, std::string>& refs) {
  WerStats total;
  for (const auto& u : utts) {
    auto it = refs.find(u.utt_id);
    Require(it != refs.end(), "missing reference for " + u.utt_id,
            ErrorKind::kUsage);
    WerStats best;
    bool first = true;
    for (const auto& h : u.hyps) {
      WerStats w = WerAlign(it->second, h.text);
      if (first || w.Errors() < best.Errors()) {
        best = w;
        first = false;
      }
    }
    total += best;
  }
  return total;
}

inline WerStats FirstPassWer(const std::vector<NBestUtterance>& utts,
                             const std::map<std::string, std::string>& refs) {
  std::vector<RescoreChoice> c;
  for (const auto& u : utts)
    c.push_back({u.utt_id, u.hyps[0].rank, u.hyps[0].text});
  return WerOfChoices(c, refs);
}

// ---------------------------------------------------------------------------
// Trace export: one TSV row per token.

inline void WriteTraceTsv(std::ostream& os, const CompositeModel& model,
                          const std::vector<StepTrace>& traces) {
  const int n = model.num_components();
  os << "position\ttoken";
  for (int i = 0; i < n; ++i) {
    const std::string& nm = model.component_name(i);
    os << "\tpi:" << nm << "\tact:" << nm << "\tatt:" << nm << "\talpha:" << nm
       << "\tlogp:" << nm;
  }
  os << "\tlogp_composite\tlogp_default\n";
  for (const StepTrace& t : traces) {
    os << t.position << '\t' << model.vocab().subword(t.token);
    for (int i = 0; i < n; ++i) {
      os << '\t' << t.pi[size_t(i)] << '\t' << int(t.act[size_t(i)]) << '\t'
         << t.att[size_t(i)] << '\t' << t.alpha[size_t(i)] << '\t'
         << t.logp[size_t(i)];
    }
    os << '\t' << t.logp_composite << '\t' << t.logp_default << '\n';
  }
}

}  // namespace complm
