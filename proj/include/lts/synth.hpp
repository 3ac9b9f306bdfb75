#pragma once

// Synthetic dialogue corpora for first-word experiments. Every post carries
// one keyword k<c>; the gold response always starts with the matching rule
// word f<c>. With probability `skew` a pair is drawn from class 0, which makes
// f0 the dominant (high-frequency) first word; otherwise the class is uniform.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lts/error.hpp"

namespace lts {

struct SynthConfig {
  std::size_t pairs = 1000;
  std::size_t vocab = 40;  // keywords + rule words + fillers
  double skew = 0.6;
  std::size_t classes = 5;
  std::uint64_t seed = 1;

  std::size_t filler_count() const { return vocab - 2 * classes; }

  void validate() const {
    if (classes < 1) throw ContractError("synth: need at least one rule class");
    if (vocab <= 2 * classes) {
      throw ContractError("synth: vocab must exceed twice the number of classes");
    }
    if (!(skew >= 0.0 && skew <= 1.0)) throw ContractError("synth: skew must lie in [0, 1]");
  }
};

struct SynthSample {
  std::size_t rule_class = 0;
  std::vector<std::string> post;
  std::vector<std::vector<std::string>> responses;
};

inline std::string synth_keyword(std::size_t c) { return "k" + std::to_string(c); }
inline std::string synth_rule_word(std::size_t c) { return "f" + std::to_string(c); }
inline std::string synth_filler(std::size_t i) { return "w" + std::to_string(i); }

class SynthGenerator {
 public:
  explicit SynthGenerator(SynthConfig config) : config_(config), rng_(config.seed) {
    config_.validate();
  }

  // One post with `response_count` responses sharing the gold first word.
  SynthSample next(std::size_t response_count = 1) {
    SynthSample s;
    s.rule_class = uniform(1'000'000) < static_cast<std::size_t>(config_.skew * 1'000'000)
                       ? 0
                       : uniform(config_.classes);
    const std::size_t filler = 2 + uniform(4);
    const std::size_t keyword_at = uniform(filler + 1);
    for (std::size_t i = 0; i <= filler; ++i) {
      s.post.push_back(i == keyword_at ? synth_keyword(s.rule_class)
                                       : synth_filler(uniform(config_.filler_count())));
    }
    for (std::size_t r = 0; r < response_count; ++r) {
      std::vector<std::string> response{synth_rule_word(s.rule_class)};
      const std::size_t body = 1 + uniform(3);
      const std::size_t pool = config_.filler_count() + config_.classes;
      for (std::size_t i = 0; i < body; ++i) {
        const std::size_t pick = uniform(pool);
        response.push_back(pick < config_.filler_count()
                               ? synth_filler(pick)
                               : synth_rule_word(pick - config_.filler_count()));
      }
      s.responses.push_back(std::move(response));
    }
    return s;
  }

 private:
  std::size_t uniform(std::size_t n) { return static_cast<std::size_t>(rng_() % n); }

  SynthConfig config_;
  std::mt19937_64 rng_;
};

namespace detail {

inline std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace detail

// Corpus text: `post<TAB>response` per line.
inline std::string synthesize_corpus(const SynthConfig& config) {
  SynthGenerator gen(config);
  std::string out;
  for (std::size_t i = 0; i < config.pairs; ++i) {
    const SynthSample s = gen.next();
    out += detail::join(s.post) + '\t' + detail::join(s.responses.front()) + '\n';
  }
  return out;
}

// Test-set text: `post<TAB>ref1<TAB>ref2...` per line.
inline std::string synthesize_test_set(const SynthConfig& config, std::size_t samples,
                                       std::size_t references) {
  if (references < 1) throw ContractError("synth: a test sample needs at least one reference");
  SynthGenerator gen(config);
  std::string out;
  for (std::size_t i = 0; i < samples; ++i) {
    const SynthSample s = gen.next(references);
    out += detail::join(s.post);
    for (const auto& r : s.responses) out += '\t' + detail::join(r);
    out += '\n';
  }
  return out;
}

}  // namespace lts
