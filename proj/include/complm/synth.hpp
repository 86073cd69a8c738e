// synth.hpp
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
// Synthetic dataset generator. A slot grammar (templates plus entity
// lists) produces the training/dev/test splits, entity files, and an
// n-best set. A held-out slice of every entity list never appears in the
// default model's training split, so the entity components carry
// information the default model was not exposed to. Per-sentence span
// metadata is diagnostic ground truth only and is never used in training.

#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "complm/common.hpp"

namespace complm {

struct SlotGrammar {
  std::vector<std::string> templates;  // words; "@type" marks a slot
  std::map<std::string, std::vector<std::string>> entities;

  static SlotGrammar LoadJson(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(ReadFileBytes(path));
    SlotGrammar g;
    for (const auto& t : j.at("templates"))
      g.templates.push_back(t.get<std::string>());
    for (const auto& [type, list] : j.at("entities").items()) {
      for (const auto& e : list) g.entities[type].push_back(e.get<std::string>());
    }
    g.Validate();
    return g;
  }

  void Validate() const {
    Require(!templates.empty(), "grammar: no templates", ErrorKind::kUsage);
    for (const std::string& t : templates)
      for (const std::string& w : SplitWhitespace(t))
        if (w.size() > 1 && w[0] == '@')
          Require(entities.count(w.substr(1)) > 0,
                  "grammar: unresolvable slot " + w, ErrorKind::kUsage);
    for (const auto& [type, list] : entities)
      Require(!list.empty(), "grammar: empty entity list " + type,
              ErrorKind::kUsage);
  }
};

struct SynthSizes {
  int default_train = 10000;
  int composite_train = 6000;
  int dev = 600;
  int test = 1200;
  int nbest_utts = 300;
  int nbest_depth = 20;
  double unseen_fraction = 0.4;  // slice of each entity list held out of
                                 // the default-train split
  int personal_users = 40;
};

struct SentenceMeta {
  struct Span {
    std::string type;
    int start = 0;  // word index
    int len = 0;    // words
    bool unseen = false;
  };
  std::string text;
  std::vector<Span> spans;
};

struct SynthResult {
  std::vector<std::string> default_train, composite_train, dev, test;
  std::vector<SentenceMeta> dev_meta, test_meta;
  // full entity lists (the components see both halves)
  std::map<std::string, std::vector<std::string>> entity_lists;
  std::map<std::string, std::set<std::string>> unseen;  // per type
  std::vector<std::string> nbest_lines, ref_lines, nbest_meta_lines;
  std::map<std::string, std::vector<std::string>> personal;  // user -> contacts
};

namespace synth_detail {

inline std::string MangleWord(const std::string& w, Rng& rng) {
  if (w.size() < 2) return w + "s";
  std::uniform_int_distribution<int> op_dist(0, 3);
  std::uniform_int_distribution<size_t> pos_dist(0, w.size() - 2);
  std::uniform_int_distribution<int> ch_dist(0, 25);
  std::string out = w;
  size_t p = pos_dist(rng);
  switch (op_dist(rng)) {
    case 0:  // drop a character
      out.erase(p, 1);
      break;
    case 1:  // substitute
      out[p] = char('a' + ch_dist(rng));
      break;
    case 2:  // transpose
      std::swap(out[p], out[p + 1]);
      break;
    default:  // duplicate
      out.insert(out.begin() + long(p), out[p]);
      break;
  }
  return out.empty() ? w : out;
}

}  // namespace synth_detail

// word-level edit distance (used for synthetic first-pass scores)
inline long WordErrors(const std::vector<std::string>& ref,
                       const std::vector<std::string>& hyp) {
  const size_t R = ref.size(), H = hyp.size();
  std::vector<long> prev(H + 1), cur(H + 1);
  for (size_t j = 0; j <= H; ++j) prev[j] = long(j);
  for (size_t i = 1; i <= R; ++i) {
    cur[0] = long(i);
    for (size_t j = 1; j <= H; ++j) {
      long s = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min(s, std::min(prev[j] + 1, cur[j - 1] + 1));
    }
    std::swap(prev, cur);
  }
  return prev[H];
}

inline SynthResult GenerateSynthCorpus(const SlotGrammar& grammar,
                                       const SynthSizes& sizes,
                                       uint64_t seed) {
  Rng rng(seed);
  SynthResult out;

  // split entity lists into seen / unseen
  std::map<std::string, std::vector<std::string>> seen, unseen;
  for (const auto& [type, list] : grammar.entities) {
    std::vector<std::string> shuffled = list;
    for (size_t i = shuffled.size(); i > 1; --i) {
      std::uniform_int_distribution<size_t> d(0, i - 1);
      std::swap(shuffled[i - 1], shuffled[d(rng)]);
    }
    size_t n_unseen = size_t(double(shuffled.size()) * sizes.unseen_fraction);
    for (size_t i = 0; i < shuffled.size(); ++i) {
      if (i < shuffled.size() - n_unseen)
        seen[type].push_back(shuffled[i]);
      else {
        unseen[type].push_back(shuffled[i]);
        out.unseen[type].insert(shuffled[i]);
      }
    }
    out.entity_lists[type] = list;
  }

  // carrier vocabulary for corruption hypotheses
  std::vector<std::string> carriers;
  {
    std::set<std::string> cset;
    for (const std::string& t : grammar.templates)
      for (const std::string& w : SplitWhitespace(t))
        if (w.empty() || w[0] != '@') cset.insert(w);
    carriers.assign(cset.begin(), cset.end());
  }

  auto MakeSentence = [&](bool allow_unseen, SentenceMeta* meta) {
    std::uniform_int_distribution<size_t> tdist(0, grammar.templates.size() - 1);
    const std::string& tpl = grammar.templates[tdist(rng)];
    std::vector<std::string> words;
    SentenceMeta m;
    for (const std::string& w : SplitWhitespace(tpl)) {
      if (w.size() > 1 && w[0] == '@') {
        const std::string type = w.substr(1);
        const auto& pool_seen = seen.at(type);
        const auto& pool_unseen = unseen.at(type);
        std::string entity;
        bool is_unseen = false;
        if (allow_unseen && !pool_unseen.empty()) {
          // half the fills come from the held-out slice
          std::uniform_real_distribution<double> coin(0.0, 1.0);
          if (coin(rng) < 0.5) {
            std::uniform_int_distribution<size_t> d(0, pool_unseen.size() - 1);
            entity = pool_unseen[d(rng)];
            is_unseen = true;
          }
        }
        if (entity.empty()) {
          std::uniform_int_distribution<size_t> d(0, pool_seen.size() - 1);
          entity = pool_seen[d(rng)];
        }
        std::vector<std::string> ewords = SplitWhitespace(entity);
        m.spans.push_back(
            {type, int(words.size()), int(ewords.size()), is_unseen});
        for (auto& ew : ewords) words.push_back(ew);
      } else {
        words.push_back(w);
      }
    }
    m.text = JoinStrings(words, " ");
    if (meta) *meta = m;
    return m.text;
  };

  for (int i = 0; i < sizes.default_train; ++i)
    out.default_train.push_back(MakeSentence(false, nullptr));
  for (int i = 0; i < sizes.composite_train; ++i)
    out.composite_train.push_back(MakeSentence(true, nullptr));
  for (int i = 0; i < sizes.dev; ++i) {
    SentenceMeta m;
    out.dev.push_back(MakeSentence(true, &m));
    out.dev_meta.push_back(std::move(m));
  }
  for (int i = 0; i < sizes.test; ++i) {
    SentenceMeta m;
    out.test.push_back(MakeSentence(true, &m));
    out.test_meta.push_back(std::move(m));
  }

  // ---------------------------------------------------------------------
  // n-best set: references drawn fresh; each list holds the reference plus
  // corrupted variants with noisy first-pass scores.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 2.0);
  int users_assigned = 0;
  for (int u = 0; u < sizes.nbest_utts; ++u) {
    SentenceMeta meta;
    std::string ref;
    // bias the pool toward entity-bearing references
    for (int attempt = 0; attempt < 50; ++attempt) {
      ref = MakeSentence(true, &meta);
      if (!meta.spans.empty() || attempt >= 10 || unit(rng) < 0.15) break;
    }
    char utt_id[32];
    std::snprintf(utt_id, sizeof(utt_id), "utt%04d", u);
    std::vector<std::string> ref_words = SplitWhitespace(ref);

    std::set<std::string> seen_hyps;
    std::vector<std::string> hyps;
    hyps.push_back(ref);
    seen_hyps.insert(ref);
    int guard = 0;
    while (int(hyps.size()) < sizes.nbest_depth && guard++ < 500) {
      std::vector<std::string> w = ref_words;
      double r = unit(rng);
      if (!meta.spans.empty() && r < 0.55) {
        // corrupt a word inside an entity span
        std::uniform_int_distribution<size_t> sdist(0, meta.spans.size() - 1);
        const auto& span = meta.spans[sdist(rng)];
        std::uniform_int_distribution<int> wdist(span.start,
                                                 span.start + span.len - 1);
        int k = wdist(rng);
        w[size_t(k)] = synth_detail::MangleWord(w[size_t(k)], rng);
      } else if (r < 0.85 || meta.spans.empty()) {
        // corrupt a carrier word
        std::uniform_int_distribution<size_t> wdist(0, w.size() - 1);
        size_t k = wdist(rng);
        if (unit(rng) < 0.5) {
          std::uniform_int_distribution<size_t> cdist(0, carriers.size() - 1);
          w[k] = carriers[cdist(rng)];
        } else {
          w[k] = synth_detail::MangleWord(w[k], rng);
        }
      } else if (w.size() > 2) {
        std::uniform_int_distribution<size_t> wdist(0, w.size() - 1);
        w.erase(w.begin() + long(wdist(rng)));
      }
      std::string hyp = JoinStrings(w, " ");
      if (seen_hyps.insert(hyp).second) hyps.push_back(hyp);
    }

    // noisy first-pass scores; the reference is not reliably first
    std::vector<std::pair<double, std::string>> scored;
    for (const std::string& h : hyps) {
      long err = WordErrors(ref_words, SplitWhitespace(h));
      double score = -4.0 * double(err) + noise(rng);
      scored.emplace_back(score, h);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });

    std::string user;
    bool has_contact = false, has_entity = !meta.spans.empty(), has_unseen = false;
    for (const auto& s : meta.spans) {
      if (s.type == "contact") has_contact = true;
      if (s.unseen) has_unseen = true;
    }
    if (has_contact && sizes.personal_users > 0) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "u%03d",
                    users_assigned % sizes.personal_users);
      user = buf;
      users_assigned++;
      for (const auto& s : meta.spans)
        if (s.type == "contact") {
          std::vector<std::string> ew(ref_words.begin() + s.start,
                                      ref_words.begin() + s.start + s.len);
          out.personal[user].push_back(JoinStrings(ew, " "));
        }
    }

    for (size_t r2 = 0; r2 < scored.size(); ++r2) {
      char line[4096];
      std::snprintf(line, sizeof(line), "%s\t%zu\t%.6f\t%s%s%s", utt_id,
                    r2 + 1, scored[r2].first, scored[r2].second.c_str(),
                    user.empty() ? "" : "\t", user.c_str());
      out.nbest_lines.emplace_back(line);
    }
    out.ref_lines.push_back(std::string(utt_id) + "\t" + ref);
    std::string tags = has_entity ? "entity" : "plain";
    if (has_contact) tags += ";contact";
    if (has_unseen) tags += ";unseen";
    out.nbest_meta_lines.push_back(std::string(utt_id) + "\t" + tags);
  }

  // top up personal lists with random contacts so they are not singletons
  for (auto& [user, list] : out.personal) {
    std::set<std::string> have(list.begin(), list.end());
    const auto& pool = out.entity_lists.count("contact")
                           ? out.entity_lists.at("contact")
                           : std::vector<std::string>{};
    while (list.size() < 12 && have.size() < pool.size()) {
      std::uniform_int_distribution<size_t> d(0, pool.size() - 1);
      const std::string& c = pool[d(rng)];
      if (have.insert(c).second) list.push_back(c);
    }
  }
  return out;
}

// word-level edit distance (used for synthetic first-pass scores)
inline long WordErrors(const std::vector<std::string>& ref,
                       const std::vector<std::string>& hyp) {
  const size_t R = ref.size(), H = hyp.size();
  std::vector<long> prev(H + 1), cur(H + 1);
  for (size_t j = 0; j <= H; ++j) prev[j] = long(j);
  for (size_t i = 1; i <= R; ++i) {
    cur[0] = long(i);
    for (size_t j = 1; j <= H; ++j) {
      long s = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min(s, std::min(prev[j] + 1, cur[j - 1] + 1));
    }
    std::swap(prev, cur);
  }
  return prev[H];
}

inline void WriteSynthCorpus(const SynthResult& r, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/entities");
  fs::create_directories(out_dir + "/personal");

  WriteLines(out_dir + "/default_train.txt", r.default_train);
  WriteLines(out_dir + "/composite_train.txt", r.composite_train);
  WriteLines(out_dir + "/dev.txt", r.dev);
  WriteLines(out_dir + "/test.txt", r.test);
  {
    std::vector<std::string> all = r.default_train;
    all.insert(all.end(), r.composite_train.begin(), r.composite_train.end());
    WriteLines(out_dir + "/vocab_corpus.txt", all);
  }
  auto WriteMeta = [](const std::string& path,
                      const std::vector<SentenceMeta>& metas) {
    std::vector<std::string> lines;
    for (size_t i = 0; i < metas.size(); ++i) {
      nlohmann::json j;
      j["index"] = i;
      j["text"] = metas[i].text;
      j["spans"] = nlohmann::json::array();
      for (const auto& s : metas[i].spans)
        j["spans"].push_back({{"type", s.type},
                              {"start", s.start},
                              {"len", s.len},
                              {"unseen", s.unseen}});
      lines.push_back(j.dump());
    }
    WriteLines(path, lines);
  };
  WriteMeta(out_dir + "/dev_meta.jsonl", r.dev_meta);
  WriteMeta(out_dir + "/test_meta.jsonl", r.test_meta);

  for (const auto& [type, list] : r.entity_lists)
    WriteLines(out_dir + "/entities/" + type + ".txt", list);
  {
    std::vector<std::string> lines;
    for (const auto& [type, names] : r.unseen)
      for (const auto& n : names) lines.push_back(type + "\t" + n);
    WriteLines(out_dir + "/unseen_entities.tsv", lines);
  }
  WriteLines(out_dir + "/nbest.tsv", r.nbest_lines);
  WriteLines(out_dir + "/refs.tsv", r.ref_lines);
  WriteLines(out_dir + "/nbest_meta.tsv", r.nbest_meta_lines);
  for (const auto& [user, list] : r.personal)
    WriteLines(out_dir + "/personal/" + user + ".txt", list);
}

}  // namespace complm
