#include "p2g/vocab.hpp"

#include <cstdio>

namespace p2g {

const std::vector<std::string>& Vocabulary::reserved_tokens() {
  static const std::vector<std::string> r = {"[PAD]", "[CLS]", "[SEP]",
                                             "[MASK]", "[NULL]", "[UNK]"};
  return r;
}

const std::vector<std::string>& Vocabulary::template_tokens() {
  static const std::vector<std::string> t = {"then", "preferred", "added",
                                             "the", "next", "event", "is"};
  return t;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& extra) {
  Vocabulary v;
  auto push = [&v](const std::string& tok) {
    if (v.index_.count(tok) != 0) return;
    v.index_[tok] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(tok);
  };
  for (const std::string& t : reserved_tokens()) push(t);
  for (const std::string& t : template_tokens()) push(t);
  for (const std::string& t : extra) push(t);
  return v;
}

Vocabulary Vocabulary::from_token_list(const std::vector<std::string>& tokens) {
  const auto& reserved = reserved_tokens();
  if (tokens.size() < reserved.size())
    throw data_error("vocabulary token list too short for reserved tokens");
  for (size_t i = 0; i < reserved.size(); ++i)
    if (tokens[i] != reserved[i])
      throw data_error("vocabulary reserved token mismatch at id " + std::to_string(i));
  Vocabulary v;
  for (const std::string& t : tokens) {
    if (v.index_.count(t) != 0) throw data_error("duplicate vocabulary token: " + t);
    v.index_[t] = static_cast<int>(v.tokens_.size());
    v.tokens_.push_back(t);
  }
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end()) throw data_error("unknown vocabulary token: " + token);
  return it->second;
}

int Vocabulary::id_or_unk(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size())
    throw data_error("vocabulary id out of range: " + std::to_string(id));
  return tokens_[static_cast<size_t>(id)];
}

uint64_t Vocabulary::hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](char c) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  };
  for (const std::string& t : tokens_) {
    for (char c : t) feed(c);
    feed('\n');
  }
  return h;
}

std::string hash_hex(uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace p2g
