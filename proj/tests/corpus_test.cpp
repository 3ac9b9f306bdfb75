#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "lts/corpus.hpp"

namespace lts {
namespace {

Corpus parse(const std::string& text, std::size_t cap = 100) {
  std::istringstream in(text);
  return parse_pairs(in, cap);
}

TEST(LoadPairs, SmallRoundTrip) {
  const Corpus c = parse("a b\tc d\nc\ta e\n");
  EXPECT_EQ(c.vocab.size(), kSpecialCount + 5);
  EXPECT_EQ(c.vocab.token(kUnkId), "<unk>");
  EXPECT_EQ(c.vocab.token(kStartId), "<s>");
  EXPECT_EQ(c.vocab.token(kEosId), "</s>");
  ASSERT_EQ(c.pairs.size(), 2u);
  EXPECT_EQ(join_tokens(c.vocab, c.pairs[0].post), "a b");
  EXPECT_EQ(join_tokens(c.vocab, c.pairs[0].response), "c d");
  EXPECT_EQ(join_tokens(c.vocab, c.pairs[1].post), "c");
  EXPECT_EQ(c.pairs[1].response.back(), kEosId);
}

TEST(LoadPairs, MostFrequentTokenRanksFirst) {
  const std::string text = "我 爱 你\t我 也\n你 好\t我\n他 说\t我 知道\n";
  std::map<std::string, int> oracle;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    for (char& ch : line)
      if (ch == '\t') ch = ' ';
    for (const auto& tok : split_tokens(line)) ++oracle[tok];
  }
  std::string top;
  int best = -1;
  for (const auto& [tok, n] : oracle)
    if (n > best) top = tok, best = n;
  ASSERT_EQ(top, "我");

  const Corpus c = parse(text);
  EXPECT_EQ(c.frequency.ranked.front(), "我");
  EXPECT_EQ(c.frequency.counts.at("我"), 4u);
}

TEST(LoadPairs, TwoTabsIsAParseErrorAtThatLine) {
  try {
    parse("a\tb\nc\td\te\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(LoadPairs, MissingTabAndEmptySidesAreParseErrors) {
  EXPECT_THROW(parse("a b\n"), ParseError);
  EXPECT_THROW(parse("\tb\n"), ParseError);
  EXPECT_THROW(parse("a\t\n"), ParseError);
  EXPECT_THROW(parse("a  b\tc\n"), ParseError);
}

TEST(LoadPairs, EmptyFileIsACorpusError) { EXPECT_THROW(parse(""), CorpusError); }

TEST(LoadPairs, MissingFileIsAnIoError) {
  EXPECT_THROW(load_pairs("/nonexistent/corpus.txt", 10), IoError);
}

TEST(LoadPairs, CapMapsRareTokensToUnk) {
  const Corpus c = parse("a a a b\tb c\n", 2);
  EXPECT_EQ(c.vocab.size(), kSpecialCount + 2);
  EXPECT_TRUE(c.vocab.contains("a"));
  EXPECT_TRUE(c.vocab.contains("b"));
  EXPECT_FALSE(c.vocab.contains("c"));
  EXPECT_EQ(c.pairs[0].response[1], kUnkId);
  EXPECT_EQ(c.frequency.ranked, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(c.frequency.counts.at("a"), 3u);
}

TEST(LoadTestSet, RSetIsTheSetOfFirstReferenceTokens) {
  const Corpus c = parse("你 好\t你 在\n");
  std::istringstream in("早\t你 好\t你 在\n早\t好\n早\t陌生 词\n");
  const auto samples = parse_test_set(in, c.vocab);
  ASSERT_EQ(samples.size(), 3u);
  EXPECT_EQ(samples[0].r_set, (std::set<TokenId>{c.vocab.id("你")}));
  EXPECT_EQ(samples[0].references.size(), 2u);
  EXPECT_EQ(samples[1].r_set.size(), 1u);
  EXPECT_EQ(samples[2].r_set, (std::set<TokenId>{kUnkId}));
  EXPECT_EQ(samples[0].post, (TokenSeq{kUnkId, kEosId}));
}

TEST(LoadTestSet, NoReferencesIsAFormatError) {
  Vocab v;
  std::istringstream in("post only\n");
  EXPECT_THROW(parse_test_set(in, v), FormatError);
}

TEST(TopKFrequent, Basics) {
  const Corpus c = parse("a a a\tb b\nc\tc\n");  // a:3 b:2 c:2
  EXPECT_TRUE(top_k_frequent(c.frequency, 0).empty());
  EXPECT_EQ(top_k_frequent(c.frequency, 2),
            (std::set<TokenId>{c.vocab.id("a"), c.vocab.id("b")}));
  EXPECT_THROW(top_k_frequent(c.frequency, 4), RangeError);
}

TEST(TopKFrequent, TiesBreakLexicographically) {
  const Corpus c = parse("b a\ta b\n");
  EXPECT_EQ(top_k_frequent(c.frequency, 1), (std::set<TokenId>{c.vocab.id("a")}));
}

// Random corpora: ids stay in range, encode/decode is identity on in-vocab
// tokens, and the top-k sets nest.
TEST(CorpusProperties, RandomCorpora) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t words = 2 + rng() % 30;
    std::string text;
    const std::size_t lines = 1 + rng() % 20;
    for (std::size_t l = 0; l < lines; ++l) {
      for (int side = 0; side < 2; ++side) {
        const std::size_t len = 1 + rng() % 6;
        for (std::size_t i = 0; i < len; ++i) {
          if (i) text += ' ';
          text += "t" + std::to_string(rng() % words);
        }
        text += side == 0 ? '\t' : '\n';
      }
    }
    const std::size_t cap = 1 + rng() % 25;
    const Corpus c = parse(text, cap);
    for (const DialoguePair& p : c.pairs) {
      ASSERT_GE(p.post.size(), 2u);
      ASSERT_GE(p.response.size(), 2u);
      for (TokenId id : p.post) ASSERT_LT(id, c.vocab.size());
      for (TokenId id : p.response) ASSERT_LT(id, c.vocab.size());
    }
    for (std::size_t i = 0; i + 1 < c.frequency.ranked.size(); ++i) {
      ASSERT_GE(c.frequency.counts.at(c.frequency.ranked[i]),
                c.frequency.counts.at(c.frequency.ranked[i + 1]));
    }
    std::vector<std::string> in_vocab(c.vocab.tokens().begin() + kSpecialCount,
                                      c.vocab.tokens().end());
    EXPECT_EQ(c.vocab.decode(c.vocab.encode(in_vocab)), in_vocab);
    for (std::size_t k = 0; k < c.frequency.ranked.size(); ++k) {
      const auto small = top_k_frequent(c.frequency, k);
      const auto big = top_k_frequent(c.frequency, k + 1);
      for (TokenId id : small) ASSERT_TRUE(big.count(id));
    }
  }
}

}  // namespace
}  // namespace lts
