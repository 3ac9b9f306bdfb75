#pragma once

// Beam search and greedy decoding. Scores are raw sums of log-probabilities
// (no length normalization); ties resolve toward the lexicographically
// smaller token sequence, i.e. the lower token id at the diverging step.

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <vector>

#include "lts/corpus.hpp"
#include "lts/model.hpp"

namespace lts {

inline constexpr std::size_t kDefaultMaxLen = 20;
inline constexpr std::size_t kDefaultBeamWidth = 10;

struct BeamHypothesis {
  TokenSeq tokens;
  double logprob = 0.0;
  std::shared_ptr<const DecoderState> state;
  bool finished = false;
};

struct BeamResult {
  TokenSeq tokens;  // ends with EOS iff finished
  double logprob = 0.0;
  bool finished = false;
};

namespace detail {

// A scored extension of a hypothesis, materialized only if it survives.
struct Candidate {
  const BeamHypothesis* parent;
  std::optional<TokenId> token;  // empty: a finished parent carried over
  double logprob;
};

inline bool lexicographically_less(const Candidate& a, const Candidate& b) {
  const TokenSeq& pa = a.parent->tokens;
  const TokenSeq& pb = b.parent->tokens;
  const std::size_t na = pa.size() + (a.token ? 1 : 0);
  const std::size_t nb = pb.size() + (b.token ? 1 : 0);
  for (std::size_t i = 0; i < std::min(na, nb); ++i) {
    const TokenId x = i < pa.size() ? pa[i] : *a.token;
    const TokenId y = i < pb.size() ? pb[i] : *b.token;
    if (x != y) return x < y;
  }
  return na < nb;
}

inline bool better(const Candidate& a, const Candidate& b) {
  if (a.logprob != b.logprob) return a.logprob > b.logprob;
  return lexicographically_less(a, b);
}

inline double log_probability(double p) { return std::log(p); }

}  // namespace detail

inline std::vector<BeamResult> beam_search(std::span<const TokenId> post, const ModelParams& params,
                                           const ModelConfig& config, std::size_t width,
                                           std::size_t max_len = kDefaultMaxLen) {
  if (width == 0) throw ContractError("beam_search: width must be >= 1");
  if (max_len == 0) throw ContractError("beam_search: max_len must be >= 1");

  const EncoderOutput enc = encode(post, params, config);
  auto [first_state, first_dist] = first_word_step(enc, params, config);

  // Step 0 is expanded from an empty root hypothesis.
  BeamHypothesis root;
  root.state = std::make_shared<const DecoderState>(std::move(first_state));
  std::vector<BeamHypothesis> beam{root};
  std::vector<Tensor> distributions{std::move(first_dist)};

  for (std::size_t length = 0; length < max_len; ++length) {
    std::vector<detail::Candidate> candidates;
    std::size_t live = 0;
    for (std::size_t h = 0; h < beam.size(); ++h) {
      const BeamHypothesis& hyp = beam[h];
      if (hyp.finished) {
        candidates.push_back({&hyp, std::nullopt, hyp.logprob});
        continue;
      }
      const Tensor& dist = distributions[live++];
      for (TokenId v = 0; v < dist.size(); ++v) {
        candidates.push_back({&hyp, v, hyp.logprob + detail::log_probability(dist[v])});
      }
    }
    const std::size_t keep = std::min(width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                      candidates.end(), detail::better);
    candidates.resize(keep);

    std::vector<BeamHypothesis> next;
    next.reserve(keep);
    for (const detail::Candidate& c : candidates) {
      BeamHypothesis hyp = *c.parent;
      if (c.token) {
        hyp.tokens.push_back(*c.token);
        hyp.logprob = c.logprob;
        hyp.finished = *c.token == kEosId;
      }
      next.push_back(std::move(hyp));
    }
    beam = std::move(next);

    const bool more = length + 1 < max_len;
    distributions.clear();
    bool any_live = false;
    for (BeamHypothesis& hyp : beam) {
      if (hyp.finished) continue;
      any_live = true;
      if (!more) continue;
      auto [state, dist] = decode_step(*hyp.state, hyp.tokens.back(), enc, params, config);
      hyp.state = std::make_shared<const DecoderState>(std::move(state));
      distributions.push_back(std::move(dist));
    }
    if (!any_live) break;
  }

  std::vector<BeamResult> results;
  results.reserve(beam.size());
  for (const BeamHypothesis& hyp : beam) results.push_back({hyp.tokens, hyp.logprob, hyp.finished});
  return results;
}

// Argmax at every step, ties toward the lower token id; stops at EOS (kept
// as the last token) or after max_len tokens.
inline TokenSeq greedy_decode(std::span<const TokenId> post, const ModelParams& params,
                              const ModelConfig& config, std::size_t max_len = kDefaultMaxLen) {
  if (max_len == 0) throw ContractError("greedy_decode: max_len must be >= 1");
  const EncoderOutput enc = encode(post, params, config);
  auto [state, dist] = first_word_step(enc, params, config);
  TokenSeq out;
  double score = 0.0;
  while (true) {
    TokenId best = 0;
    double best_score = score + detail::log_probability(dist[0]);
    for (TokenId v = 1; v < dist.size(); ++v) {
      const double s = score + detail::log_probability(dist[v]);
      if (s > best_score) {
        best = v;
        best_score = s;
      }
    }
    out.push_back(best);
    score = best_score;
    if (best == kEosId || out.size() >= max_len) break;
    std::tie(state, dist) = decode_step(state, best, enc, params, config);
  }
  return out;
}

// Replays the model over `tokens` and sums the step log-probabilities.
inline double sequence_logprob(std::span<const TokenId> post, std::span<const TokenId> tokens,
                               const ModelParams& params, const ModelConfig& config) {
  if (tokens.empty()) return 0.0;
  const EncoderOutput enc = encode(post, params, config);
  auto [state, dist] = first_word_step(enc, params, config);
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (t > 0) std::tie(state, dist) = decode_step(state, tokens[t - 1], enc, params, config);
    total += detail::log_probability(dist[tokens[t]]);
  }
  return total;
}

}  // namespace lts
