// vocab.hpp
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
// Shared subword vocabulary. Tokens are byte-pair-encoded subwords; a
// trailing underscore marks the final piece of a word. Ids 0..2 are the
// reserved symbols <s>, </s>, <unk>.

#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "complm/common.hpp"

namespace complm {

inline constexpr int kBosId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kUnkId = 2;
inline constexpr const char* kBosStr = "<s>";
inline constexpr const char* kEosStr = "</s>";
inline constexpr const char* kUnkStr = "<unk>";
inline constexpr char kWordFinalMark = '_';

// A tokenized sentence: w_1 .. w_L with w_L == </s>. The <s> prefix is
// implicit and never stored.
struct TokenSeq {
  std::vector<int> ids;
};

class Vocabulary {
 public:
  Vocabulary() = default;

  static Vocabulary FromSubwords(std::vector<std::string> subwords) {
    Vocabulary v;
    Require(subwords.size() >= 3 && subwords[0] == kBosStr &&
                subwords[1] == kEosStr && subwords[2] == kUnkStr,
            "vocabulary must start with <s>, </s>, <unk>");
    v.subwords_ = std::move(subwords);
    v.id_of_.reserve(v.subwords_.size());
    v.max_len_ = 0;
    for (size_t i = 0; i < v.subwords_.size(); ++i) {
      const std::string& s = v.subwords_[i];
      Require(!s.empty(), "empty subword at id " + std::to_string(i));
      Require(v.id_of_.emplace(s, int(i)).second, "duplicate subword: " + s);
      v.max_len_ = std::max(v.max_len_, s.size());
    }
    return v;
  }

  int size() const { return int(subwords_.size()); }

  const std::string& subword(int id) const {
    Require(id >= 0 && id < size(), "token id out of range");
    return subwords_[id];
  }

  // -1 when absent.
  int IdOf(const std::string& s) const {
    auto it = id_of_.find(s);
    return it == id_of_.end() ? -1 : it->second;
  }

  bool WordFinal(int id) const {
    const std::string& s = subword(id);
    return s.size() >= 1 && s.back() == kWordFinalMark && id > kUnkId;
  }

  // True at positions where a new word may start: after a word-final
  // subword or after <s>/</s>.
  bool IsWordBoundary(int id) const {
    return id == kBosId || id == kEosId || WordFinal(id);
  }

  // Greedy longest-match segmentation per word; unknown characters map to
  // <unk>. Always appends </s>. Total on any input.
  TokenSeq Encode(const std::string& text) const {
    TokenSeq seq;
    for (const std::string& word : SplitWhitespace(text)) EncodeWord(word, &seq.ids);
    seq.ids.push_back(kEosId);
    return seq;
  }

  std::string Decode(const TokenSeq& seq) const {
    std::string out;
    for (int id : seq.ids) {
      Require(id >= 0 && id < size(), "token id out of range in decode");
      if (id == kBosId || id == kEosId) continue;
      out += subwords_[id];
    }
    // word-final '_' becomes a space between words
    std::string joined;
    for (char c : out) joined += (c == kWordFinalMark) ? ' ' : c;
    while (!joined.empty() && joined.back() == ' ') joined.pop_back();
    return joined;
  }

  void Save(const std::string& path) const { WriteLines(path, subwords_); }

  static Vocabulary Load(const std::string& path) {
    return FromSubwords(ReadLines(path));
  }

  // Deterministic BPE over the corpus. Word-final pieces carry a trailing
  // '_'; merges never cross word boundaries. Ties in pair frequency break
  // toward the lexicographically smallest (left, right) pair.
  static Vocabulary BuildBpe(const std::vector<std::string>& corpus_lines,
                             int target_size);

 private:
  void EncodeWord(const std::string& word, std::vector<int>* out) const {
    // Work on the word with the final marker appended so matches at the end
    // naturally pick the '_' variants.
    std::string s = word + kWordFinalMark;
    size_t i = 0;
    while (i < s.size()) {
      size_t best = 0;
      int best_id = -1;
      size_t cap = std::min(max_len_, s.size() - i);
      for (size_t len = cap; len >= 1; --len) {
        auto it = id_of_.find(s.substr(i, len));
        if (it != id_of_.end() && it->second > kUnkId) {
          best = len;
          best_id = it->second;
          break;
        }
      }
      if (best_id >= 0) {
        out->push_back(best_id);
        i += best;
      } else {
        out->push_back(kUnkId);
        // Skip one code point; if it was the last real character, consume
        // the trailing marker with it.
        size_t n = Utf8Codepoints(s.substr(i, 4))[0].size();
        i += n;
        if (i == s.size() - 1) i = s.size();
      }
    }
  }

  std::vector<std::string> subwords_;
  std::unordered_map<std::string, int> id_of_;
  size_t max_len_ = 0;
};

inline Vocabulary Vocabulary::BuildBpe(
    const std::vector<std::string>& corpus_lines, int target_size) {
  // word -> frequency
  std::map<std::string, long> word_freq;
  bool any = false;
  for (const auto& line : corpus_lines) {
    for (auto& w : SplitWhitespace(line)) {
      word_freq[w]++;
      any = true;
    }
  }
  Require(any, "build_vocab: empty corpus", ErrorKind::kUsage);

  // Each word becomes a symbol sequence: code points, last one marked final.
  struct WordEntry {
    std::vector<std::string> syms;
    long freq;
  };
  std::vector<WordEntry> words;
  std::map<std::string, int> base_syms;
  for (const auto& [w, f] : word_freq) {
    auto cps = Utf8Codepoints(w);
    WordEntry e;
    e.freq = f;
    for (size_t i = 0; i < cps.size(); ++i) {
      std::string sym = cps[i];
      if (i + 1 == cps.size()) sym += kWordFinalMark;
      e.syms.push_back(sym);
      base_syms.emplace(sym, 0);
    }
    words.push_back(std::move(e));
  }

  int min_size = int(base_syms.size()) + 3;
  Require(target_size >= min_size,
          "build_vocab: target_size " + std::to_string(target_size) +
              " below minimum " + std::to_string(min_size),
          ErrorKind::kUsage);

  std::vector<std::string> vocab = {kBosStr, kEosStr, kUnkStr};
  std::map<std::string, int> in_vocab;
  for (auto& [s, _] : base_syms) {
    in_vocab.emplace(s, int(vocab.size()));
    vocab.push_back(s);
  }

  while (int(vocab.size()) < target_size) {
    // Count adjacent pairs; std::map keeps tie-breaking lexicographic.
    std::map<std::pair<std::string, std::string>, long> pair_freq;
    for (const auto& e : words)
      for (size_t i = 0; i + 1 < e.syms.size(); ++i)
        pair_freq[{e.syms[i], e.syms[i + 1]}] += e.freq;
    if (pair_freq.empty()) break;
    auto best = pair_freq.begin();
    for (auto it = pair_freq.begin(); it != pair_freq.end(); ++it)
      if (it->second > best->second) best = it;
    const std::string merged = best->first.first + best->first.second;
    const auto [left, right] = best->first;
    for (auto& e : words) {
      std::vector<std::string> out;
      out.reserve(e.syms.size());
      size_t i = 0;
      while (i < e.syms.size()) {
        if (i + 1 < e.syms.size() && e.syms[i] == left &&
            e.syms[i + 1] == right) {
          out.push_back(merged);
          i += 2;
        } else {
          out.push_back(e.syms[i]);
          ++i;
        }
      }
      e.syms = std::move(out);
    }
    if (!in_vocab.count(merged)) {
      in_vocab.emplace(merged, int(vocab.size()));
      vocab.push_back(merged);
    }
  }
  return FromSubwords(std::move(vocab));
}

// Validates the TokenSeq contract against a vocabulary: ids in range,
// exactly one </s>, and it is last.
inline void ValidateTokenSeq(const Vocabulary& v, const TokenSeq& seq) {
  Require(!seq.ids.empty(), "token sequence empty");
  int eos_count = 0;
  for (int id : seq.ids) {
    Require(id >= 0 && id < v.size(), "token id out of range");
    if (id == kEosId) ++eos_count;
  }
  Require(eos_count == 1 && seq.ids.back() == kEosId,
          "token sequence must end with a single </s>");
}

}  // namespace complm
