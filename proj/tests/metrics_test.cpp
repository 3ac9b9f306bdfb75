#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "lts/metrics.hpp"
#include "oracles.hpp"

namespace lts {
namespace {

// Vocabulary 我 你 好 他 with 我 the most frequent and 你 second.
struct Fixture {
  Corpus corpus;
  TokenId wo, ni, hao, ta;
  Fixture() {
    std::istringstream in("我 我 我\t你 你\n好\t他\n");
    corpus = parse_pairs(in, 100);
    wo = corpus.vocab.id("我");
    ni = corpus.vocab.id("你");
    hao = corpus.vocab.id("好");
    ta = corpus.vocab.id("他");
  }
};

TestSample sample_with_rset(std::set<TokenId> r) {
  TestSample s;
  s.post = {kUnkId, kEosId};
  s.r_set = r;
  for (TokenId t : r) s.references.push_back({t});
  return s;
}

TEST(Accw, HandEnumeration) {
  const Fixture f;
  ASSERT_EQ(f.corpus.frequency.ranked[0], "我");
  ASSERT_EQ(f.corpus.frequency.ranked[1], "你");
  const std::vector<TestSample> samples{sample_with_rset({f.wo}), sample_with_rset({f.wo, f.hao}),
                                        sample_with_rset({f.ni}), sample_with_rset({f.ta})};
  const std::vector<TokenSeq> responses{{f.wo, kEosId}, {f.wo, kEosId}, {f.ni, kEosId}, {f.hao, kEosId}};
  EXPECT_DOUBLE_EQ(accw(samples, responses, f.corpus.frequency, 0), 0.75);
  EXPECT_DOUBLE_EQ(accw(samples, responses, f.corpus.frequency, 1), 0.25);
  EXPECT_DOUBLE_EQ(accw(samples, responses, f.corpus.frequency, 2), 0.0);
  // Plateau once every hit word is filtered.
  EXPECT_DOUBLE_EQ(accw(samples, responses, f.corpus.frequency, 4), 0.0);
}

TEST(Accw, AllHitsAtZeroIsOne) {
  const Fixture f;
  const std::vector<TestSample> samples{sample_with_rset({f.hao}), sample_with_rset({f.ta})};
  const std::vector<TokenSeq> responses{{f.hao}, {f.ta, f.wo}};
  EXPECT_EQ(accw(samples, responses, f.corpus.frequency, 0), 1.0);
}

TEST(Accw, Errors) {
  const Fixture f;
  EXPECT_THROW(accw({}, {}, f.corpus.frequency, 0), ContractError);
  const std::vector<TestSample> samples{sample_with_rset({f.hao})};
  const std::vector<TokenSeq> none;
  EXPECT_THROW(accw(samples, none, f.corpus.frequency, 0), ContractError);
}

TEST(DivI, HandCount) {
  const Fixture f;
  const std::vector<TokenSeq> responses{{f.wo}, {f.wo}, {f.ni}, {f.hao}};
  EXPECT_DOUBLE_EQ(div_i(responses, f.corpus.frequency, 1), 0.5);
  EXPECT_DOUBLE_EQ(div_i(responses, f.corpus.frequency, 2), 0.75);
  EXPECT_DOUBLE_EQ(div_i(responses, f.corpus.frequency, 4), 1.0);
  const std::vector<TokenSeq> rare{{f.ta}, {f.hao}};
  EXPECT_EQ(div_i(rare, f.corpus.frequency, 2), 0.0);
  EXPECT_THROW(div_i(responses, f.corpus.frequency, 0), ContractError);
  EXPECT_THROW(div_i({}, f.corpus.frequency, 1), ContractError);
}

TEST(AccwDiv, MonotoneOnRandomFixtures) {
  std::mt19937_64 rng(123);
  for (int trial = 0; trial < 1000; ++trial) {
    const oracle::MetricFixture f = oracle::random_metric_fixture(rng);
    const std::size_t max_i = f.freq.ranked.size();
    double prev_acc = 2.0, prev_div = -1.0;
    for (std::size_t i = 0; i <= max_i; ++i) {
      const double a = accw(f.samples, f.responses, f.freq, i);
      ASSERT_GE(a, 0.0);
      ASSERT_LE(a, prev_acc);
      prev_acc = a;
      if (i >= 1) {
        const double d = div_i(f.responses, f.freq, i);
        ASSERT_LE(d, 1.0);
        ASSERT_GE(d, prev_div);
        prev_div = d;
      }
    }
    ASSERT_EQ(prev_div, 1.0);  // every first word is a ranked word
  }
}

TEST(Bleu, ClippingHandCase) {
  const TokenSeq cand{3, 3, 4};
  const std::vector<TokenSeq> refs{{3, 4}};
  EXPECT_NEAR(bleu_n(cand, refs, 1), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(bleu_n(cand, refs, 2), 0.5, 1e-12);
  EXPECT_EQ(bleu_n(cand, refs, 3), 0.0);
}

TEST(Bleu, IdentityAndNoOverlap) {
  const TokenSeq x{3, 4, 5, 6};
  const std::vector<TokenSeq> self{x};
  for (std::size_t n = 1; n <= 4; ++n) EXPECT_EQ(bleu_n(x, self, n), 1.0);
  const std::vector<TokenSeq> other{{7, 8}};
  EXPECT_EQ(bleu_n(x, other, 1), 0.0);
  EXPECT_EQ(bleu_n(TokenSeq{}, self, 1), 0.0);
  EXPECT_THROW(bleu_n(x, std::vector<TokenSeq>{}, 1), ContractError);
  EXPECT_THROW(bleu_n(x, self, 0), ContractError);
}

TEST(Bleu, MaxOverReferencesClips) {
  // "a a" against refs [a] and [a a]: the max reference count is 2.
  const std::vector<TokenSeq> refs{{3}, {3, 3}};
  EXPECT_EQ(bleu_n(TokenSeq{3, 3}, refs, 1), 1.0);
  EXPECT_EQ(bleu_n(TokenSeq{3, 3, 3}, refs, 1), 2.0 / 3.0);
}

TEST(Bleu, RandomProperties) {
  std::mt19937_64 rng(77);
  auto seq = [&] {
    TokenSeq s(1 + rng() % 6);
    for (TokenId& t : s) t = static_cast<TokenId>(3 + rng() % 5);
    return s;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const TokenSeq cand = seq();
    std::vector<TokenSeq> refs{seq()};
    for (std::size_t n = 1; n <= 3; ++n) {
      const double base = bleu_n(cand, refs, n);
      ASSERT_GE(base, 0.0);
      ASSERT_LE(base, 1.0);
      std::vector<TokenSeq> more = refs;
      more.push_back(seq());
      ASSERT_GE(bleu_n(cand, more, n), base);
      more.push_back(cand);
      if (cand.size() >= n) ASSERT_EQ(bleu_n(cand, more, n), 1.0);
    }
  }
}

TEST(Bleu, CorpusScoreIsMicroAveraged) {
  CorpusBleu corpus;
  const std::vector<TokenSeq> r1{{3, 4}};
  const std::vector<TokenSeq> r2{{5}};
  corpus.add({3, 3, 4}, r1);  // 2 of 3 unigrams
  corpus.add({5}, r2);        // 1 of 1
  EXPECT_DOUBLE_EQ(corpus.score(1), 3.0 / 4.0);
  EXPECT_DOUBLE_EQ(corpus.score(2), 1.0 / 2.0);
  EXPECT_EQ(corpus.score(3), 0.0);
  EXPECT_THROW(corpus.score(4), RangeError);
}

TEST(Bleu, BrevityPenaltyIsOptional) {
  CorpusBleu corpus;
  const std::vector<TokenSeq> refs{{3, 4, 5, 6}};
  corpus.add({3, 4}, refs);
  EXPECT_EQ(corpus.score(1, false), 1.0);
  EXPECT_NEAR(corpus.score(1, true), std::exp(1.0 - 4.0 / 2.0), 1e-15);
  EXPECT_EQ(brevity_penalty(5, 4), 1.0);
  EXPECT_EQ(closest_reference_length(3, std::vector<TokenSeq>{{1, 1}, {1, 1, 1, 1}}), 2u);
}

std::vector<AnnotationRecord> hand_ratings() {
  return {{"x", "a", 0}, {"x", "b", 0}, {"x", "c", 1}, {"y", "a", 1}, {"y", "b", 1}, {"y", "c", 1}};
}

TEST(FleissKappa, HandCase) {
  EXPECT_NEAR(fleiss_kappa(hand_ratings()), 0.25, 1e-12);
  EXPECT_NEAR(oracle::kappa_from_table({{2, 1, 0}, {0, 3, 0}}), 0.25, 1e-12);
}

TEST(FleissKappa, IdenticalRatersGiveOne) {
  std::vector<AnnotationRecord> r;
  for (const char* item : {"p", "q", "s"})
    for (const char* who : {"a", "b"}) r.push_back({item, who, 2});
  EXPECT_EQ(fleiss_kappa(r), 1.0);
}

TEST(FleissKappa, RandomRatingsAreNearZero) {
  const auto records = oracle::random_annotations(10000, 3, 2024);
  EXPECT_LT(std::abs(fleiss_kappa(records)), 0.05);
}

TEST(FleissKappa, MatchesTableOracleAndIsPermutationInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t items = 2 + rng() % 20, raters = 2 + rng() % 4;
    auto records = oracle::random_annotations(items, raters, rng());
    std::vector<std::vector<double>> table(items, std::vector<double>(kAnnotationLevels, 0.0));
    for (std::size_t k = 0; k < records.size(); ++k) table[k / raters][records[k].score] += 1.0;
    const double expected = oracle::kappa_from_table(table);
    const double k = fleiss_kappa(records);
    if (std::isfinite(expected)) ASSERT_NEAR(k, expected, 1e-12);
    std::shuffle(records.begin(), records.end(), rng);
    for (auto& r : records) {
      r.item = "renamed-" + r.item;
      r.rater = "z" + r.rater;
    }
    ASSERT_NEAR(fleiss_kappa(records), k, 1e-12);
  }
}

TEST(FleissKappa, Errors) {
  auto r = hand_ratings();
  r.pop_back();
  try {
    fleiss_kappa(r);
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("item"), std::string::npos);
  }
  EXPECT_THROW(fleiss_kappa(std::vector<AnnotationRecord>{{"x", "a", 0}}), ContractError);
  EXPECT_THROW(fleiss_kappa(std::vector<AnnotationRecord>{{"x", "a", 0}, {"x", "a", 1}}), ContractError);
  EXPECT_THROW(fleiss_kappa(std::vector<AnnotationRecord>{}), ContractError);
}

TEST(Annotations, ParseAndSummarize) {
  std::istringstream in("x\ta\t0\nx\tb\t0\nx\tc\t1\ny\ta\t1\ny\tb\t1\ny\tc\t1\n");
  const auto records = parse_annotations(in);
  ASSERT_EQ(records.size(), 6u);
  const AnnotationSummary s = summarize_annotations(records);
  EXPECT_NEAR(s.kappa, 0.25, 1e-12);
  EXPECT_DOUBLE_EQ(s.mean_score, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(s.ratio[0], 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(s.ratio[2], 0.0);
  std::istringstream bad("x\ta\t3\n");
  EXPECT_THROW(parse_annotations(bad), ParseError);
}

TEST(Evaluate, EchoFixture) {
  const Fixture f;
  std::vector<TestSample> samples;
  for (TokenId t : {f.wo, f.ni, f.hao}) {
    TestSample s;
    s.post = {t, f.ta, kEosId};
    s.references = {{t, f.ta}};
    s.r_set = {t};
    samples.push_back(s);
  }
  EvalOptions opts;
  opts.max_i = 2;
  const MetricReport r = evaluate(samples, f.corpus.frequency,
                                  [](const TestSample& s) { return s.post; }, opts);
  EXPECT_EQ(r.accw.at(0), 1.0);
  EXPECT_EQ(r.bleu.at(1), 1.0);
  EXPECT_EQ(r.bleu.at(2), 1.0);
  EXPECT_EQ(r.sample_count, 3u);
  EXPECT_EQ(r.div.size(), 2u);
  EXPECT_NE(r.to_text().find("accw-0=1.0000000000\n"), std::string::npos);
}

TEST(Evaluate, ZeroMaxIHasOnlyAccw0) {
  const Fixture f;
  const std::vector<TestSample> samples{sample_with_rset({f.wo})};
  const MetricReport r = evaluate(samples, f.corpus.frequency,
                                  [](const TestSample& s) { return s.post; }, EvalOptions{});
  EXPECT_EQ(r.accw.size(), 1u);
  EXPECT_TRUE(r.div.empty());
}

TEST(Evaluate, MaxIBeyondRankedIsARangeErrorBeforeDecoding) {
  const Fixture f;
  const std::vector<TestSample> samples{sample_with_rset({f.wo})};
  EvalOptions opts;
  opts.max_i = 5;
  bool called = false;
  EXPECT_THROW(evaluate(samples, f.corpus.frequency,
                        [&](const TestSample& s) {
                          called = true;
                          return s.post;
                        },
                        opts),
               RangeError);
  EXPECT_FALSE(called);
}

TEST(Evaluate, ReportInvariantsOnRandomFixtures) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 200; ++trial) {
    const oracle::MetricFixture f = oracle::random_metric_fixture(rng);
    EvalOptions opts;
    opts.max_i = f.freq.ranked.size();
    std::size_t k = 0;
    const MetricReport r =
        evaluate(f.samples, f.freq, [&](const TestSample&) { return f.responses[k++]; }, opts);
    for (std::size_t i = 1; i <= opts.max_i; ++i) {
      ASSERT_LE(r.accw.at(i), r.accw.at(i - 1));
      if (i >= 2) ASSERT_GE(r.div.at(i), r.div.at(i - 1));
    }
    for (const auto& [n, v] : r.bleu) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }
}

TEST(Evaluate, CheckpointCompatibility) {
  const Fixture f;
  ModelConfig c;
  c.vocab_size = f.corpus.vocab.size();
  c.embed_dim = 3;
  c.hidden_dim = 4;
  const Checkpoint ckpt{c, f.corpus.vocab, make_params(c, 1)};
  const std::vector<TestSample> samples{sample_with_rset({f.wo})};
  EvalOptions opts;
  opts.max_i = 1;
  opts.beam_width = 2;
  opts.max_len = 3;
  const MetricReport a = evaluate(ckpt, samples, f.corpus.frequency, opts);
  const MetricReport b = evaluate(ckpt, samples, f.corpus.frequency, opts);
  EXPECT_EQ(a.to_text(), b.to_text());

  std::istringstream other("甲 乙\t丙\n");
  const Corpus foreign = parse_pairs(other, 100);
  EXPECT_THROW(evaluate(ckpt, samples, foreign.frequency, opts), CompatibilityError);
}

TEST(Report, TextRoundTripsThroughParser) {
  MetricReport r;
  r.sample_count = 2;
  r.accw = {{0, 0.5}, {1, 0.25}};
  r.div = {{1, 0.75}};
  r.bleu = {{1, 0.125}, {2, 0.0}, {3, 0.0}};
  r.sample_bleu = {{1.0, 0.5, 0.0}};
  std::istringstream in(r.to_text());
  const auto kv = parse_report(in);
  EXPECT_EQ(kv.at("samples"), "2");
  EXPECT_EQ(std::stod(kv.at("accw-1")), 0.25);
  EXPECT_EQ(std::stod(kv.at("div-1")), 0.75);
  EXPECT_EQ(kv.at("brevity_penalty"), "off");
  EXPECT_EQ(std::stod(kv.at("sample-0.bleu-2")), 0.5);
  EXPECT_EQ(r.curves_csv(), "i,accw,div\n0,0.5000000000,\n1,0.2500000000,0.7500000000\n");
}

}  // namespace
}  // namespace lts
