// checkpoint.hpp
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
// Versioned checkpoint container (magic CLMC). Every checkpoint embeds the
// vocabulary so evaluation commands are self-contained. Layout details in
// docs/formats.md.

#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <string>

#include "complm/common.hpp"
#include "complm/lstm_lm.hpp"
#include "complm/optimizer.hpp"
#include "complm/serialize.hpp"
#include "complm/vocab.hpp"

namespace complm {

inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointHeader {
  std::string kind;  // "lstm_lm" | "composite"
  long step_count = 0;
  uint64_t seed = 0;
};

inline void WriteCheckpointHeader(std::ostream& os, const CheckpointHeader& h) {
  const char magic[4] = {'C', 'L', 'M', 'C'};
  os.write(magic, 4);
  io::WriteU32(os, kCheckpointVersion);
  io::WriteString(os, h.kind);
  io::WriteString(os, kToolVersion);
  io::WriteI64(os, h.step_count);
  io::WriteU64(os, h.seed);
}

inline CheckpointHeader ReadCheckpointHeader(std::istream& is) {
  io::ExpectMagic(is, "CLMC", "checkpoint");
  uint32_t version = io::ReadU32(is);
  Require(version == kCheckpointVersion, "unsupported checkpoint version");
  CheckpointHeader h;
  h.kind = io::ReadString(is);
  io::ReadString(is);  // tool version, informational
  h.step_count = io::ReadI64(is);
  h.seed = io::ReadU64(is);
  return h;
}

inline void WriteVocab(std::ostream& os, const Vocabulary& v) {
  io::WriteU64(os, uint64_t(v.size()));
  for (int i = 0; i < v.size(); ++i) io::WriteString(os, v.subword(i));
}

inline Vocabulary ReadVocab(std::istream& is) {
  uint64_t n = io::ReadU64(is);
  std::vector<std::string> subwords;
  subwords.reserve(n);
  for (uint64_t i = 0; i < n; ++i) subwords.push_back(io::ReadString(is));
  return Vocabulary::FromSubwords(std::move(subwords));
}

// --- LSTM LM checkpoints ---------------------------------------------------

struct LmCheckpoint {
  Vocabulary vocab;
  std::unique_ptr<LstmLm> model;
  CheckpointHeader header;
  std::unique_ptr<Adam> optimizer;  // null when absent
};

inline void SaveLmCheckpoint(const std::string& path, const Vocabulary& vocab,
                             const LstmLm& lm, long step_count, uint64_t seed,
                             const Adam* opt = nullptr) {
  std::ofstream os(path, std::ios::binary);
  Require(os.good(), "cannot write " + path);
  WriteCheckpointHeader(os, {"lstm_lm", step_count, seed});
  WriteVocab(os, vocab);
  lm.Serialize(os);
  io::WriteU8(os, opt ? 1 : 0);
  if (opt) opt->Serialize(os);
}

inline LmCheckpoint LoadLmCheckpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  Require(is.good(), "cannot open " + path, ErrorKind::kUsage);
  LmCheckpoint ck;
  ck.header = ReadCheckpointHeader(is);
  Require(ck.header.kind == "lstm_lm",
          "expected an lstm_lm checkpoint: " + path, ErrorKind::kUsage);
  ck.vocab = ReadVocab(is);
  ck.model = std::make_unique<LstmLm>(LstmLm::Deserialize(is));
  Require(ck.model->vocab_size() == ck.vocab.size(),
          "checkpoint vocab size mismatch");
  if (io::ReadU8(is)) {
    ck.optimizer = std::make_unique<Adam>();
    ck.optimizer->Deserialize(is);
  }
  return ck;
}

// Peeks a file's kind without loading the payload.
inline std::string CheckpointKind(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  Require(is.good(), "cannot open " + path, ErrorKind::kUsage);
  char magic[4];
  is.read(magic, 4);
  Require(bool(is), "truncated file: " + path, ErrorKind::kUsage);
  if (std::string(magic, 4) == "CLMW") return "wfst";
  if (std::string(magic, 4) == "CLMC") {
    io::ReadU32(is);
    return io::ReadString(is);
  }
  throw Error(ErrorKind::kUsage, "unrecognized model file: " + path);
}

}  // namespace complm
