#pragma once

// Dialogue corpora, multi-reference test sets, vocabulary and frequency ranks.
//
// Corpus file:   post<TAB>response            one pair per line
// Test-set file: post<TAB>ref1<TAB>ref2...    at least one reference
// Tokens are separated by single spaces; files are UTF-8 with LF endings.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lts/error.hpp"

namespace lts {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

inline constexpr TokenId kUnkId = 0;
inline constexpr TokenId kStartId = 1;
inline constexpr TokenId kEosId = 2;
inline constexpr std::size_t kSpecialCount = 3;

inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kStartToken = "<s>";
inline constexpr std::string_view kEosToken = "</s>";

class Vocab {
 public:
  Vocab() : id_to_token_{std::string(kUnkToken), std::string(kStartToken), std::string(kEosToken)} {
    for (TokenId i = 0; i < id_to_token_.size(); ++i) token_to_id_.emplace(id_to_token_[i], i);
  }

  // Builds a vocabulary from the full token list, specials first.
  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < kSpecialCount || tokens[kUnkId] != kUnkToken ||
        tokens[kStartId] != kStartToken || tokens[kEosId] != kEosToken) {
      throw FormatError("vocabulary must start with " + std::string(kUnkToken) + " " +
                        std::string(kStartToken) + " " + std::string(kEosToken));
    }
    Vocab v;
    for (std::size_t i = kSpecialCount; i < tokens.size(); ++i) v.add(tokens[i]);
    return v;
  }

  TokenId add(const std::string& token) {
    if (auto it = token_to_id_.find(token); it != token_to_id_.end()) {
      throw FormatError("duplicate vocabulary token '" + token + "'");
    }
    const auto id = static_cast<TokenId>(id_to_token_.size());
    id_to_token_.push_back(token);
    token_to_id_.emplace(token, id);
    return id;
  }

  std::size_t size() const noexcept { return id_to_token_.size(); }
  bool contains(std::string_view token) const {
    return token_to_id_.find(std::string(token)) != token_to_id_.end();
  }
  TokenId id(std::string_view token) const {
    auto it = token_to_id_.find(std::string(token));
    return it == token_to_id_.end() ? kUnkId : it->second;
  }
  const std::string& token(TokenId id) const {
    if (id >= id_to_token_.size()) {
      throw IndexError("token id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[id];
  }
  const std::vector<std::string>& tokens() const noexcept { return id_to_token_; }

  TokenSeq encode(const std::vector<std::string>& tokens) const {
    TokenSeq out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> decode(const TokenSeq& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (TokenId i : ids) out.push_back(token(i));
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.id_to_token_ == b.id_to_token_;
  }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId> token_to_id_;
};

// Training-corpus token counts, ranked by descending count with ties broken
// lexicographically. Special tokens never appear.
struct FrequencyTable {
  std::vector<std::string> ranked;
  std::vector<TokenId> ranked_ids;
  std::map<std::string, std::size_t> counts;
};

struct DialoguePair {
  TokenSeq post;      // EOS-terminated
  TokenSeq response;  // EOS-terminated
};

struct TestSample {
  TokenSeq post;  // EOS-terminated
  std::vector<TokenSeq> references;
  std::set<TokenId> r_set;
};

struct Corpus {
  std::vector<DialoguePair> pairs;
  Vocab vocab;
  FrequencyTable frequency;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::vector<std::string> tokenize(std::string_view field, std::size_t line_no,
                                         const char* what) {
  if (field.empty()) throw ParseError(line_no, std::string("empty ") + what);
  std::vector<std::string> out;
  for (std::string_view tok : split(field, ' ')) {
    if (tok.empty()) {
      throw ParseError(line_no, std::string("empty token in ") + what);
    }
    out.emplace_back(tok);
  }
  return out;
}

inline TokenSeq with_eos(TokenSeq seq) {
  seq.push_back(kEosId);
  return seq;
}

inline std::ifstream open_for_reading(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace detail

// Ranks tokens by count (descending), ties lexicographic.
inline std::vector<std::string> rank_by_count(const std::map<std::string, std::size_t>& counts) {
  std::vector<std::string> ranked;
  ranked.reserve(counts.size());
  for (const auto& [tok, _] : counts) ranked.push_back(tok);
  std::stable_sort(ranked.begin(), ranked.end(), [&](const std::string& a, const std::string& b) {
    return counts.at(a) > counts.at(b);
  });
  return ranked;
}

// Reads `post<TAB>response` lines. The vocabulary keeps the `vocab_cap` most
// frequent tokens (counted over posts and responses); the rest map to UNK.
inline Corpus parse_pairs(std::istream& in, std::size_t vocab_cap) {
  std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>> raw;
  std::map<std::string, std::size_t> counts;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 2) {
      throw ParseError(line_no, "expected exactly one TAB, found " +
                                    std::to_string(fields.size() - 1));
    }
    auto post = detail::tokenize(fields[0], line_no, "post");
    auto response = detail::tokenize(fields[1], line_no, "response");
    for (const auto* side : {&post, &response})
      for (const auto& tok : *side) ++counts[tok];
    raw.emplace_back(std::move(post), std::move(response));
  }
  if (raw.empty()) throw CorpusError("corpus is empty");

  for (auto special : {kUnkToken, kStartToken, kEosToken}) counts.erase(std::string(special));
  std::vector<std::string> ranked = rank_by_count(counts);
  if (ranked.size() > vocab_cap) ranked.resize(vocab_cap);

  Corpus corpus;
  for (const auto& tok : ranked) corpus.vocab.add(tok);
  corpus.frequency.ranked = ranked;
  for (const auto& tok : ranked) {
    corpus.frequency.ranked_ids.push_back(corpus.vocab.id(tok));
    corpus.frequency.counts.emplace(tok, counts.at(tok));
  }
  corpus.pairs.reserve(raw.size());
  for (const auto& [post, response] : raw) {
    corpus.pairs.push_back({detail::with_eos(corpus.vocab.encode(post)),
                            detail::with_eos(corpus.vocab.encode(response))});
  }
  return corpus;
}

inline Corpus load_pairs(const std::filesystem::path& path, std::size_t vocab_cap) {
  auto in = detail::open_for_reading(path);
  return parse_pairs(in, vocab_cap);
}

inline std::vector<TestSample> parse_test_set(std::istream& in, const Vocab& vocab) {
  std::vector<TestSample> samples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split(line, '\t');
    if (fields.size() < 2) {
      throw FormatError("line " + std::to_string(line_no) + ": test sample has no references");
    }
    TestSample sample;
    sample.post = detail::with_eos(vocab.encode(detail::tokenize(fields[0], line_no, "post")));
    for (std::size_t i = 1; i < fields.size(); ++i) {
      TokenSeq ref = vocab.encode(detail::tokenize(fields[i], line_no, "reference"));
      sample.r_set.insert(ref.front());
      sample.references.push_back(std::move(ref));
    }
    samples.push_back(std::move(sample));
  }
  return samples;
}

inline std::vector<TestSample> load_test_set(const std::filesystem::path& path,
                                             const Vocab& vocab) {
  auto in = detail::open_for_reading(path);
  return parse_test_set(in, vocab);
}

// Ids of the k most frequent training tokens.
inline std::set<TokenId> top_k_frequent(const FrequencyTable& table, std::size_t k) {
  if (k > table.ranked_ids.size()) {
    throw RangeError("top_k_frequent: k=" + std::to_string(k) + " exceeds the " +
                     std::to_string(table.ranked_ids.size()) + " ranked tokens");
  }
  return {table.ranked_ids.begin(), table.ranked_ids.begin() + static_cast<std::ptrdiff_t>(k)};
}

// Splits a line into tokens for the interactive/generation paths, where an
// empty line is a valid (empty) post.
inline std::vector<std::string> split_tokens(std::string_view line) {
  std::vector<std::string> out;
  for (std::string_view tok : detail::split(line, ' '))
    if (!tok.empty()) out.emplace_back(tok);
  return out;
}

inline std::string join_tokens(const Vocab& vocab, const TokenSeq& ids) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEosId) break;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

}  // namespace lts
