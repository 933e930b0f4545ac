#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "p2g/common.hpp"

namespace p2g {

// Token/id bijection with fixed reserved ids. Baseline pattern/label words
// (then, preferred, added, ...) are always present so the manual-PVP and
// likelihood-ratio baselines have their tokens in any corpus.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kMask = 3;
  static constexpr int kNull = 4;
  static constexpr int kUnk = 5;

  static const std::vector<std::string>& reserved_tokens();
  static const std::vector<std::string>& template_tokens();

  // reserved + template + extra (deduplicated, order preserved).
  static Vocabulary build(const std::vector<std::string>& extra);
  // Exact token list, e.g. from a checkpoint; validates reserved prefix.
  static Vocabulary from_token_list(const std::vector<std::string>& tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  // Exact lookup; throws on unknown token.
  int id(const std::string& token) const;
  // Lookup with [UNK] fallback.
  int id_or_unk(const std::string& token) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // FNV-1a over the ordered token list; identifies the vocabulary in
  // checkpoints and corpus manifests.
  uint64_t hash() const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

std::string hash_hex(uint64_t h);

}  // namespace p2g
