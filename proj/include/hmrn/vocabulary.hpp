#pragma once

#include "hmrn/common.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace hmrn {

using TokenId = std::int32_t;

// Lowercase, turn punctuation into separators, split on whitespace.
inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c) || std::ispunct(c)) {
      if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;

  Vocabulary() : id_to_token_{"<pad>", "<unk>"} {}

  // Tokens in id order starting at id 2.
  explicit Vocabulary(const std::vector<std::string>& tokens) : Vocabulary() {
    for (const auto& t : tokens) {
      require(!t.empty(), "vocabulary token must be nonempty");
      require(!token_to_id_.count(t), "duplicate vocabulary token: " + t);
      token_to_id_.emplace(t, static_cast<TokenId>(id_to_token_.size()));
      id_to_token_.push_back(t);
    }
  }

  std::size_t size() const { return id_to_token_.size(); }

  TokenId id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  const std::string& token(TokenId id) const {
    require(id >= 0 && static_cast<std::size_t>(id) < id_to_token_.size(),
            "token id out of range: " + std::to_string(id));
    return id_to_token_[static_cast<std::size_t>(id)];
  }

  // Corpus tokens only (no specials), in id order.
  std::vector<std::string> corpus_tokens() const {
    return {id_to_token_.begin() + 2, id_to_token_.end()};
  }

  std::uint64_t hash() const {
    Fnv1a h;
    for (std::size_t i = 2; i < id_to_token_.size(); ++i) {
      h.update(id_to_token_[i]);
      h.update("\n");
    }
    return h.digest();
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot write vocabulary file: " + path);
    for (std::size_t i = 2; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot read vocabulary file: " + path);
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      tokens.push_back(line);
    }
    return Vocabulary(tokens);
  }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
};

// Tokens with count >= min_count, ordered by frequency (desc) then lexicographically.
inline Vocabulary build_vocabulary(const std::vector<std::string>& corpus, int min_count = 1) {
  if (corpus.empty()) throw Error("empty corpus");
  std::map<std::string, int> counts;
  for (const auto& caption : corpus)
    for (auto& w : split_words(caption)) ++counts[w];
  std::vector<std::pair<std::string, int>> kept;
  for (auto& [w, c] : counts)
    if (c >= min_count) kept.emplace_back(w, c);
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [w, c] : kept) tokens.push_back(w);
  return Vocabulary(tokens);
}

struct TokenizedQuery {
  std::vector<TokenId> ids;
  std::size_t length = 0;  // true length M
};

inline TokenizedQuery tokenize_query(std::string_view text, const Vocabulary& vocab) {
  auto words = split_words(text);
  if (words.empty()) throw Error("empty query");
  TokenizedQuery q;
  q.ids.reserve(words.size());
  for (const auto& w : words) q.ids.push_back(vocab.id(w));
  q.length = q.ids.size();
  return q;
}

inline std::string detokenize(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == Vocabulary::kPad) continue;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

}  // namespace hmrn
