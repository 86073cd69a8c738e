// stream.hpp
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
// Lockstep batched sentence streaming for truncated backpropagation.
// Each batch column carries a continuous stream of sentences; when one
// finishes the slot refills with the next, possibly mid-chunk. Chunks cut
// the stream every chunk_size positions; model state is carried across
// chunk edges but gradients (and RL returns) are not.

#pragma once

#include <functional>
#include <vector>

#include "complm/common.hpp"
#include "complm/vocab.hpp"

namespace complm {

// One scoring unit: a sentence (inputs <s>, w_1..w_{L-1}; targets w_1..w_L)
// or a synthetic unit with its own target/weight layout.
struct StreamUnit {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<double> weights;  // per-position loss weight
  int corpus_index = -1;        // -1 for synthetic units
};

inline StreamUnit UnitFromSentence(const TokenSeq& seq, int corpus_index) {
  StreamUnit u;
  u.corpus_index = corpus_index;
  u.inputs.push_back(kBosId);
  for (size_t i = 0; i + 1 < seq.ids.size(); ++i) u.inputs.push_back(seq.ids[i]);
  u.targets = seq.ids;
  u.weights.assign(seq.ids.size(), 1.0);
  return u;
}

// Random-token unit used when training entity-type LSTM components: after
// at least one random input token the label is </s>, and the first
// position carries no loss.
inline StreamUnit UnitFromRandomTail(int vocab_size, int min_len, int max_len,
                                     Rng& rng) {
  std::uniform_int_distribution<int> len_dist(min_len, max_len);
  std::uniform_int_distribution<int> tok_dist(kUnkId + 1, vocab_size - 1);
  int len = len_dist(rng);
  StreamUnit u;
  u.inputs.push_back(kBosId);
  u.targets.push_back(kEosId);  // placeholder, weight 0
  u.weights.push_back(0.0);
  for (int i = 0; i < len; ++i) {
    u.inputs.push_back(tok_dist(rng));
    u.targets.push_back(kEosId);
    u.weights.push_back(1.0);
  }
  // drop the position that would follow the final target
  u.inputs.resize(u.targets.size());
  return u;
}

// Per-step view of the batch. `fresh` marks columns where a new unit
// starts (all model state for that column resets); `valid` is 0 once a
// non-cycling stream has run dry in that column.
struct StreamStep {
  std::vector<int> input;
  std::vector<int> target;
  std::vector<double> weight;
  std::vector<uint8_t> fresh;
  std::vector<uint8_t> valid;
  std::vector<int> unit_index;  // corpus index of the unit, -1 synthetic
  std::vector<int> pos;         // 1-based position within the unit
};

class SentenceStream {
 public:
  // `next_unit` returns false when the source is exhausted (never, when
  // cycling). Batched columns pull units in call order, column-major.
  SentenceStream(int batch, std::function<bool(StreamUnit*)> next_unit)
      : batch_(batch), next_unit_(std::move(next_unit)), slots_(batch) {}

  // Advances every column one position. Returns false once every column
  // is exhausted.
  bool Next(StreamStep* out) {
    out->input.assign(batch_, kBosId);
    out->target.assign(batch_, kEosId);
    out->weight.assign(batch_, 0.0);
    out->fresh.assign(batch_, 0);
    out->valid.assign(batch_, 0);
    out->unit_index.assign(batch_, -1);
    out->pos.assign(batch_, 0);
    bool any = false;
    for (int b = 0; b < batch_; ++b) {
      Slot& s = slots_[b];
      if (s.pos >= int(s.unit.targets.size())) {
        StreamUnit u;
        if (!next_unit_(&u)) {
          s.dead = true;
        } else {
          s.unit = std::move(u);
          s.pos = 0;
        }
      }
      if (s.dead) continue;
      out->fresh[b] = (s.pos == 0);
      out->input[b] = s.unit.inputs[s.pos];
      out->target[b] = s.unit.targets[s.pos];
      out->weight[b] = s.unit.weights[s.pos];
      out->valid[b] = 1;
      out->unit_index[b] = s.unit.corpus_index;
      out->pos[b] = s.pos + 1;
      s.pos++;
      any = true;
    }
    return any;
  }

  // Pulls up to chunk_size steps; the final chunk of a finite stream may
  // be shorter. Returns the number of steps produced.
  int NextChunk(int chunk_size, std::vector<StreamStep>* steps) {
    steps->clear();
    for (int i = 0; i < chunk_size; ++i) {
      StreamStep st;
      if (!Next(&st)) break;
      steps->push_back(std::move(st));
    }
    return int(steps->size());
  }

 private:
  struct Slot {
    StreamUnit unit;
    int pos = 0;
    bool dead = false;
  };

  int batch_;
  std::function<bool(StreamUnit*)> next_unit_;
  std::vector<Slot> slots_;
};

// Cycling corpus source with per-pass reshuffle; optionally interleaves
// random-tail units at `aug_ratio` (entity-component training).
class CorpusUnitSource {
 public:
  CorpusUnitSource(const std::vector<TokenSeq>* corpus, uint64_t seed,
                   bool cycle, double aug_ratio = 0.0, int aug_vocab = 0)
      : corpus_(corpus),
        rng_(seed),
        cycle_(cycle),
        aug_ratio_(aug_ratio),
        aug_vocab_(aug_vocab) {
    Require(!corpus_->empty(), "empty corpus", ErrorKind::kUsage);
    order_.resize(corpus_->size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = int(i);
    Shuffle();
  }

  bool operator()(StreamUnit* out) {
    if (aug_ratio_ > 0.0 && aug_coin_(rng_) < aug_ratio_) {
      *out = UnitFromRandomTail(aug_vocab_, 1, 4, rng_);
      return true;
    }
    if (cursor_ >= order_.size()) {
      if (!cycle_) return false;
      Shuffle();
      cursor_ = 0;
    }
    int idx = order_[cursor_++];
    *out = UnitFromSentence((*corpus_)[idx], idx);
    return true;
  }

 private:
  void Shuffle() {
    for (size_t i = order_.size(); i > 1; --i) {
      std::uniform_int_distribution<size_t> d(0, i - 1);
      std::swap(order_[i - 1], order_[d(rng_)]);
    }
  }

  const std::vector<TokenSeq>* corpus_;
  Rng rng_;
  bool cycle_;
  double aug_ratio_;
  int aug_vocab_;
  std::uniform_real_distribution<double> aug_coin_{0.0, 1.0};
  std::vector<int> order_;
  size_t cursor_ = 0;
};

// Deterministic in-order source (evaluation).
class InOrderUnitSource {
 public:
  explicit InOrderUnitSource(const std::vector<TokenSeq>* corpus)
      : corpus_(corpus) {}
  bool operator()(StreamUnit* out) {
    if (cursor_ >= corpus_->size()) return false;
    *out = UnitFromSentence((*corpus_)[cursor_], int(cursor_));
    cursor_++;
    return true;
  }

 private:
  const std::vector<TokenSeq>* corpus_;
  size_t cursor_ = 0;
};

}  // namespace complm
