// wfst.hpp
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
// Weighted finite-state acceptors over subword tokens. Arc weights are
// -log probabilities; the semiring "plus" is log-sum-exp and "times" is
// addition. Entity automata are built as a union of phrase chains, then
// determinized, weight-pushed, and minimized in that semiring. A dead
// state is appended afterwards: every label that no state matches routes
// there implicitly, and its only continuation is </s> with probability 1.

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "complm/common.hpp"
#include "complm/serialize.hpp"
#include "complm/vocab.hpp"

namespace complm {

inline constexpr double kInfWeight = std::numeric_limits<double>::infinity();

// a (+) b in the -log semiring.
inline double NegLogAdd(double a, double b) {
  if (a == kInfWeight) return b;
  if (b == kInfWeight) return a;
  return -LogAddExp(-a, -b);
}

struct WfstArc {
  int label = 0;
  double weight = 0.0;  // -log probability
  int target = 0;
};

// A plain weighted acceptor; start state is 0 by convention.
struct Wfst {
  std::vector<std::vector<WfstArc>> arcs;   // per state, sorted by label
  std::vector<double> final_weight;         // -log, kInfWeight when non-final
  int num_states() const { return int(arcs.size()); }

  int AddState() {
    arcs.emplace_back();
    final_weight.push_back(kInfWeight);
    return num_states() - 1;
  }

  void SortArcs() {
    for (auto& a : arcs)
      std::sort(a.begin(), a.end(), [](const WfstArc& x, const WfstArc& y) {
        return x.label < y.label;
      });
  }

  // Deterministic lookup; -1 when the label has no arc.
  int FindArc(int state, int label) const {
    const auto& v = arcs[state];
    auto it = std::lower_bound(
        v.begin(), v.end(), label,
        [](const WfstArc& a, int l) { return a.label < l; });
    if (it == v.end() || it->label != label) return -1;
    return int(it - v.begin());
  }

  bool Deterministic() const {
    for (const auto& v : arcs)
      for (size_t i = 1; i < v.size(); ++i)
        if (v[i].label == v[i - 1].label) return false;
    return true;
  }
};

// Union of weighted token chains. The phrase weight sits on the first arc.
inline Wfst BuildPhraseUnion(
    const std::vector<std::pair<std::vector<int>, double>>& phrases) {
  Wfst f;
  f.AddState();  // start
  for (const auto& [tokens, neg_log_w] : phrases) {
    Require(!tokens.empty(), "fst_build: empty phrase token sequence");
    int cur = 0;
    for (size_t i = 0; i < tokens.size(); ++i) {
      int nxt = f.AddState();
      f.arcs[cur].push_back({tokens[i], i == 0 ? neg_log_w : 0.0, nxt});
      cur = nxt;
    }
    f.final_weight[cur] = NegLogAdd(f.final_weight[cur], 0.0);
  }
  f.SortArcs();
  return f;
}

// Weighted subset construction in the -log semiring. Input must be
// acyclic (phrase unions are).
inline Wfst Determinize(const Wfst& in) {
  using Subset = std::vector<std::pair<int, double>>;  // (state, residual)
  auto KeyOf = [](const Subset& s) {
    std::string key;
    key.reserve(s.size() * 12);
    for (auto& [q, w] : s) {
      int64_t qw = llround(w * 1e10);
      key.append(reinterpret_cast<const char*>(&q), sizeof(q));
      key.append(reinterpret_cast<const char*>(&qw), sizeof(qw));
    }
    return key;
  };

  Wfst out;
  std::unordered_map<std::string, int> seen;
  std::vector<Subset> subsets;

  Subset init{{0, 0.0}};
  out.AddState();
  seen[KeyOf(init)] = 0;
  subsets.push_back(init);

  for (size_t si = 0; si < subsets.size(); ++si) {
    Subset s = subsets[si];
    // final weight
    double fw = kInfWeight;
    for (auto& [q, v] : s)
      if (in.final_weight[q] != kInfWeight)
        fw = NegLogAdd(fw, v + in.final_weight[q]);
    out.final_weight[si] = fw;

    // group outgoing arcs by label
    std::map<int, std::map<int, double>> by_label;  // label -> target -> weight
    for (auto& [q, v] : s)
      for (const auto& a : in.arcs[q]) {
        auto& slot = by_label[a.label];
        auto it = slot.emplace(a.target, kInfWeight).first;
        it->second = NegLogAdd(it->second, v + a.weight);
      }

    for (auto& [label, targets] : by_label) {
      double total = kInfWeight;
      for (auto& [q, w] : targets) total = NegLogAdd(total, w);
      Subset nxt;
      nxt.reserve(targets.size());
      for (auto& [q, w] : targets) nxt.emplace_back(q, w - total);
      std::string key = KeyOf(nxt);
      auto it = seen.find(key);
      int tgt;
      if (it == seen.end()) {
        tgt = out.AddState();
        seen[key] = tgt;
        subsets.push_back(nxt);
      } else {
        tgt = it->second;
      }
      out.arcs[si].push_back({label, total, tgt});
    }
  }
  out.SortArcs();
  return out;
}

// Topological order with state 0 first. Requires acyclicity.
inline std::vector<int> TopoOrder(const Wfst& f) {
  int n = f.num_states();
  std::vector<int> indeg(n, 0);
  for (const auto& v : f.arcs)
    for (const auto& a : v) indeg[a.target]++;
  std::vector<int> order;
  order.reserve(n);
  std::vector<int> stack;
  for (int q = 0; q < n; ++q)
    if (indeg[q] == 0) stack.push_back(q);
  while (!stack.empty()) {
    int q = stack.back();
    stack.pop_back();
    order.push_back(q);
    for (const auto& a : f.arcs[q])
      if (--indeg[a.target] == 0) stack.push_back(a.target);
  }
  Require(int(order.size()) == n, "automaton is not acyclic");
  return order;
}

// Weight pushing toward the initial state. Afterwards every state is
// locally normalized: arcs plus the final weight log-sum to one. The
// total weight at the start is dropped, which is exactly the phrase-count
// normalization.
inline Wfst Push(const Wfst& in) {
  std::vector<int> order = TopoOrder(in);
  int n = in.num_states();
  std::vector<double> dist(n, kInfWeight);  // (+)-sum over paths to final
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    int q = *it;
    double d = in.final_weight[q];
    for (const auto& a : in.arcs[q])
      d = NegLogAdd(d, a.weight + dist[a.target]);
    dist[q] = d;
  }
  Wfst out = in;
  for (int q = 0; q < n; ++q) {
    if (dist[q] == kInfWeight) continue;  // dead-end state, kept as-is
    for (auto& a : out.arcs[q]) a.weight = a.weight + dist[a.target] - dist[q];
    if (out.final_weight[q] != kInfWeight) out.final_weight[q] -= dist[q];
  }
  return out;
}

// Moore-style partition refinement; weights are quantized for signatures
// only. Expects a deterministic, pushed automaton.
inline Wfst Minimize(const Wfst& in) {
  int n = in.num_states();
  auto Quant = [](double w) -> int64_t {
    if (w == kInfWeight) return std::numeric_limits<int64_t>::max();
    return llround(w * 1e10);
  };

  std::vector<int> cls(n, 0);
  {
    std::map<int64_t, int> fini;
    for (int q = 0; q < n; ++q) {
      auto it = fini.emplace(Quant(in.final_weight[q]), int(fini.size())).first;
      cls[q] = it->second;
    }
  }
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<std::vector<int64_t>, int> sig_to_cls;
    std::vector<int> next(n);
    for (int q = 0; q < n; ++q) {
      std::vector<int64_t> sig;
      sig.push_back(cls[q]);
      for (const auto& a : in.arcs[q]) {
        sig.push_back(a.label);
        sig.push_back(Quant(a.weight));
        sig.push_back(cls[a.target]);
      }
      auto it = sig_to_cls.emplace(std::move(sig), int(sig_to_cls.size())).first;
      next[q] = it->second;
    }
    if (next != cls) {
      changed = true;
      cls = next;
    }
  }

  // Rebuild with class of the start state first.
  int ncls = 1 + *std::max_element(cls.begin(), cls.end());
  std::vector<int> remap(ncls, -1);
  Wfst out;
  std::vector<int> rep;
  auto Visit = [&](int c) {
    if (remap[c] >= 0) return remap[c];
    remap[c] = out.AddState();
    rep.push_back(-1);
    return remap[c];
  };
  // breadth-first over classes from the start, deterministic order
  std::vector<int> queue{cls[0]};
  Visit(cls[0]);
  rep[remap[cls[0]]] = 0;
  for (size_t qi = 0; qi < queue.size(); ++qi) {
    int c = queue[qi];
    int q = rep[remap[c]];
    out.final_weight[remap[c]] = in.final_weight[q];
    for (const auto& a : in.arcs[q]) {
      int tc = cls[a.target];
      if (remap[tc] < 0) {
        Visit(tc);
        rep[remap[tc]] = a.target;
        queue.push_back(tc);
      }
      out.arcs[remap[c]].push_back({a.label, a.weight, remap[tc]});
    }
  }
  out.SortArcs();
  return out;
}

// Exact local renormalization: per state, divide arcs and the final weight
// by their (+)-sum so stochasticity holds to float rounding.
inline void RenormalizeStates(Wfst* f) {
  for (int q = 0; q < f->num_states(); ++q) {
    double total = f->final_weight[q];
    for (const auto& a : f->arcs[q]) total = NegLogAdd(total, a.weight);
    if (total == kInfWeight) continue;
    for (auto& a : f->arcs[q]) a.weight -= total;
    if (f->final_weight[q] != kInfWeight) f->final_weight[q] -= total;
  }
}

// ---------------------------------------------------------------------------

struct WfstBuildOptions {
  int max_phrase_words = 3;  // longer entities are filtered out
};

// Entity automaton with the dead state appended. The dead state carries
// final weight 0 (-log 1) and no arcs, so the generic distribution readout
// yields p(</s>) = 1 there.
class WfstModel {
 public:
  Wfst fst;
  int dead_state = -1;
  int vocab_size = 0;

  using BuildOptions = WfstBuildOptions;

  static WfstModel Build(const std::vector<std::pair<std::string, double>>& entities,
                         const Vocabulary& vocab,
                         WfstBuildOptions opt = WfstBuildOptions()) {
    Require(!entities.empty(), "fst_build: empty entity list",
            ErrorKind::kUsage);
    // encode, filter, merge duplicates
    std::map<std::vector<int>, double> merged;
    for (const auto& [phrase, count] : entities) {
      Require(count > 0, "fst_build: nonpositive count for '" + phrase + "'",
              ErrorKind::kUsage);
      if (int(SplitWhitespace(phrase).size()) > opt.max_phrase_words) continue;
      TokenSeq seq = vocab.Encode(phrase);
      std::vector<int> tokens(seq.ids.begin(), seq.ids.end() - 1);  // strip </s>
      Require(!tokens.empty(), "fst_build: phrase encodes to nothing: '" +
                                   phrase + "'",
              ErrorKind::kUsage);
      for (int t : tokens)
        Require(t != kUnkId,
                "fst_build: phrase has out-of-vocabulary characters: '" +
                    phrase + "'",
                ErrorKind::kUsage);
      merged[tokens] += count;
    }
    Require(!merged.empty(), "fst_build: no phrase within the word limit",
            ErrorKind::kUsage);

    double total = 0;
    for (auto& [k, c] : merged) total += c;
    std::vector<std::pair<std::vector<int>, double>> weighted;
    weighted.reserve(merged.size());
    for (auto& [k, c] : merged) weighted.emplace_back(k, -std::log(c / total));

    WfstModel m;
    m.vocab_size = vocab.size();
    m.fst = Minimize(Push(Determinize(BuildPhraseUnion(weighted))));
    RenormalizeStates(&m.fst);
    m.dead_state = m.fst.AddState();
    m.fst.final_weight[m.dead_state] = 0.0;
    return m;
  }

  void Serialize(std::ostream& os) const {
    const char magic[4] = {'C', 'L', 'M', 'W'};
    os.write(magic, 4);
    io::WriteU32(os, 1);  // version
    io::WriteU64(os, uint64_t(vocab_size));
    io::WriteU64(os, uint64_t(fst.num_states()));
    io::WriteI64(os, dead_state);
    for (int q = 0; q < fst.num_states(); ++q) {
      io::WriteF64(os, fst.final_weight[q]);
      io::WriteU64(os, fst.arcs[q].size());
      for (const auto& a : fst.arcs[q]) {
        io::WriteU64(os, uint64_t(a.label));
        io::WriteF64(os, a.weight);
        io::WriteU64(os, uint64_t(a.target));
      }
    }
  }

  static WfstModel Deserialize(std::istream& is) {
    io::ExpectMagic(is, "CLMW", "WFST component");
    uint32_t version = io::ReadU32(is);
    Require(version == 1, "unsupported WFST file version");
    WfstModel m;
    m.vocab_size = int(io::ReadU64(is));
    uint64_t n = io::ReadU64(is);
    m.dead_state = int(io::ReadI64(is));
    for (uint64_t q = 0; q < n; ++q) {
      m.fst.AddState();
      m.fst.final_weight[q] = io::ReadF64(is);
      uint64_t na = io::ReadU64(is);
      for (uint64_t i = 0; i < na; ++i) {
        WfstArc a;
        a.label = int(io::ReadU64(is));
        a.weight = io::ReadF64(is);
        a.target = int(io::ReadU64(is));
        m.fst.arcs[q].push_back(a);
      }
    }
    return m;
  }

  void Save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    Require(os.good(), "cannot write " + path);
    Serialize(os);
  }
  static WfstModel Load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    Require(is.good(), "cannot open " + path, ErrorKind::kUsage);
    return Deserialize(is);
  }
};

}  // namespace complm
