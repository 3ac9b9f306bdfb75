#pragma once

// First-word accuracy/diversity curves, multi-reference BLEU, and Fleiss'
// kappa over annotation files.

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "lts/checkpoint.hpp"
#include "lts/corpus.hpp"
#include "lts/inference.hpp"

namespace lts {

inline constexpr std::size_t kMaxBleuOrder = 3;

struct MetricReport {
  std::map<std::size_t, double> accw;  // i = 0..I
  std::map<std::size_t, double> div;   // i = 1..I
  std::map<std::size_t, double> bleu;  // n = 1..3
  std::size_t sample_count = 0;
  bool brevity_penalty = false;
  std::vector<std::array<double, kMaxBleuOrder>> sample_bleu;

  std::string to_text() const;
  std::string curves_csv() const;
};

namespace detail {

inline TokenId first_word(const TokenSeq& response) {
  if (response.empty()) throw ContractError("metrics: empty response");
  return response.front();
}

inline TokenSeq strip_eos(const TokenSeq& seq) {
  TokenSeq out;
  for (TokenId t : seq) {
    if (t == kEosId) break;
    out.push_back(t);
  }
  return out;
}

inline std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// First-word metrics

// Fraction of samples whose response starts with a word in the sample's
// R-set, not counting hits on the i most frequent training words.
inline double accw(std::span<const TestSample> samples, std::span<const TokenSeq> responses,
                   const FrequencyTable& freq, std::size_t i) {
  if (samples.empty()) throw ContractError("accw: no samples");
  if (samples.size() != responses.size()) {
    throw ContractError("accw: sample and response counts differ");
  }
  const std::set<TokenId> ignored = top_k_frequent(freq, i);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const TokenId w = detail::first_word(responses[k]);
    if (samples[k].r_set.count(w) && !ignored.count(w)) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

// Fraction of responses whose first word is among the i most frequent
// training words. Higher means less diverse.
inline double div_i(std::span<const TokenSeq> responses, const FrequencyTable& freq,
                    std::size_t i) {
  if (i < 1) throw ContractError("div_i: i must be >= 1");
  if (responses.empty()) throw ContractError("div_i: no responses");
  const std::set<TokenId> top = top_k_frequent(freq, i);
  std::size_t in_top = 0;
  for (const TokenSeq& r : responses) in_top += top.count(detail::first_word(r));
  return static_cast<double>(in_top) / static_cast<double>(responses.size());
}

// ---------------------------------------------------------------------------
// BLEU

struct NgramMatch {
  std::size_t clipped = 0;  // sum over candidate n-grams of min(count, max ref count)
  std::size_t total = 0;    // candidate n-gram count
};

inline std::map<TokenSeq, std::size_t> ngram_counts(const TokenSeq& seq, std::size_t n) {
  std::map<TokenSeq, std::size_t> counts;
  if (seq.size() < n) return counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) {
    ++counts[TokenSeq(seq.begin() + static_cast<std::ptrdiff_t>(i),
                      seq.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

inline NgramMatch match_ngrams(const TokenSeq& candidate, std::span<const TokenSeq> references,
                               std::size_t n) {
  if (n < 1) throw ContractError("bleu: order must be >= 1");
  if (references.empty()) throw ContractError("bleu: no references");
  NgramMatch m;
  const auto cand = ngram_counts(candidate, n);
  std::map<TokenSeq, std::size_t> max_ref;
  for (const TokenSeq& ref : references) {
    for (const auto& [g, c] : ngram_counts(ref, n)) {
      std::size_t& slot = max_ref[g];
      slot = std::max(slot, c);
    }
  }
  for (const auto& [g, c] : cand) {
    m.total += c;
    auto it = max_ref.find(g);
    if (it != max_ref.end()) m.clipped += std::min(c, it->second);
  }
  return m;
}

// Order-n modified precision of one candidate against all its references.
inline double bleu_n(const TokenSeq& candidate, std::span<const TokenSeq> references,
                     std::size_t n) {
  const NgramMatch m = match_ngrams(candidate, references, n);
  return m.total == 0 ? 0.0 : static_cast<double>(m.clipped) / static_cast<double>(m.total);
}

// Length of the reference closest to `length`; ties go to the shorter one.
inline std::size_t closest_reference_length(std::size_t length,
                                            std::span<const TokenSeq> references) {
  std::size_t best = references.front().size();
  for (const TokenSeq& r : references) {
    const auto d = [&](std::size_t x) { return x > length ? x - length : length - x; };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

inline double brevity_penalty(std::size_t candidate_length, std::size_t reference_length) {
  if (candidate_length == 0) return 0.0;
  if (candidate_length > reference_length) return 1.0;
  return std::exp(1.0 - static_cast<double>(reference_length) /
                            static_cast<double>(candidate_length));
}

// Corpus-level BLEU-n: clipped matches and candidate n-gram totals are summed
// over all samples before dividing.
class CorpusBleu {
 public:
  void add(const TokenSeq& candidate, std::span<const TokenSeq> references) {
    for (std::size_t n = 1; n <= kMaxBleuOrder; ++n) {
      const NgramMatch m = match_ngrams(candidate, references, n);
      clipped_[n - 1] += m.clipped;
      total_[n - 1] += m.total;
    }
    candidate_length_ += candidate.size();
    reference_length_ += closest_reference_length(candidate.size(), references);
  }

  double score(std::size_t n, bool with_brevity_penalty = false) const {
    if (n < 1 || n > kMaxBleuOrder) throw RangeError("bleu order out of range");
    if (total_[n - 1] == 0) return 0.0;
    double p = static_cast<double>(clipped_[n - 1]) / static_cast<double>(total_[n - 1]);
    if (with_brevity_penalty) p *= brevity_penalty(candidate_length_, reference_length_);
    return p;
  }

 private:
  std::array<std::size_t, kMaxBleuOrder> clipped_{};
  std::array<std::size_t, kMaxBleuOrder> total_{};
  std::size_t candidate_length_ = 0;
  std::size_t reference_length_ = 0;
};

// ---------------------------------------------------------------------------
// Annotation agreement

inline constexpr int kAnnotationLevels = 3;

struct AnnotationRecord {
  std::string item;
  std::string rater;
  int score = 0;
};

inline std::vector<AnnotationRecord> parse_annotations(std::istream& in) {
  std::vector<AnnotationRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = detail::split(line, '\t');
    if (fields.size() != 3) throw ParseError(line_no, "expected item<TAB>rater<TAB>score");
    if (fields[2].size() != 1 || fields[2][0] < '0' ||
        fields[2][0] >= '0' + kAnnotationLevels) {
      throw ParseError(line_no, "score must be 0, 1 or 2");
    }
    records.push_back({std::string(fields[0]), std::string(fields[1]), fields[2][0] - '0'});
  }
  return records;
}

inline std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  auto in = detail::open_for_reading(path);
  return parse_annotations(in);
}

// Fleiss' kappa. Every item must be rated by the same number (>= 2) of
// distinct raters. Returns 1 when chance agreement is already total.
inline double fleiss_kappa(std::span<const AnnotationRecord> records) {
  if (records.empty()) throw ContractError("fleiss_kappa: no annotations");
  std::map<std::string, std::array<std::size_t, kAnnotationLevels>> table;
  std::map<std::string, std::set<std::string>> raters;
  for (const AnnotationRecord& r : records) {
    if (r.score < 0 || r.score >= kAnnotationLevels) {
      throw ContractError("fleiss_kappa: score out of range for item " + r.item);
    }
    if (!raters[r.item].insert(r.rater).second) {
      throw ContractError("fleiss_kappa: rater " + r.rater + " rated item " + r.item + " twice");
    }
    ++table[r.item][static_cast<std::size_t>(r.score)];
  }
  const std::size_t n = raters.begin()->second.size();
  for (const auto& [item, who] : raters) {
    if (who.size() != n) {
      throw ContractError("fleiss_kappa: item " + item + " has " + std::to_string(who.size()) +
                          " raters, expected " + std::to_string(n));
    }
  }
  if (n < 2) throw ContractError("fleiss_kappa: need at least 2 raters per item");

  const double nd = static_cast<double>(n);
  const double items = static_cast<double>(table.size());
  double mean_agreement = 0.0;
  std::array<double, kAnnotationLevels> marginal{};
  for (const auto& [item, counts] : table) {
    double sq = 0.0;
    for (std::size_t j = 0; j < counts.size(); ++j) {
      sq += static_cast<double>(counts[j] * counts[j]);
      marginal[j] += static_cast<double>(counts[j]);
    }
    mean_agreement += (sq - nd) / (nd * (nd - 1.0));
  }
  mean_agreement /= items;
  double chance = 0.0;
  for (double m : marginal) {
    const double p = m / (items * nd);
    chance += p * p;
  }
  if (chance >= 1.0) return 1.0;
  return (mean_agreement - chance) / (1.0 - chance);
}

struct AnnotationSummary {
  double mean_score = 0.0;
  std::array<double, kAnnotationLevels> ratio{};
  double kappa = 0.0;
};

inline AnnotationSummary summarize_annotations(std::span<const AnnotationRecord> records) {
  AnnotationSummary s;
  s.kappa = fleiss_kappa(records);
  for (const AnnotationRecord& r : records) {
    s.mean_score += r.score;
    s.ratio[static_cast<std::size_t>(r.score)] += 1.0;
  }
  const double total = static_cast<double>(records.size());
  s.mean_score /= total;
  for (double& r : s.ratio) r /= total;
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalOptions {
  std::size_t max_i = 0;
  std::size_t beam_width = kDefaultBeamWidth;
  std::size_t max_len = kDefaultMaxLen;
  bool brevity_penalty = false;
};

using Responder = std::function<TokenSeq(const TestSample&)>;

// Scores the responses produced by `respond` (one per sample, in order).
inline MetricReport evaluate(std::span<const TestSample> samples, const FrequencyTable& freq,
                             const Responder& respond, const EvalOptions& options) {
  if (samples.empty()) throw ContractError("evaluate: empty test set");
  if (options.max_i > freq.ranked_ids.size()) {
    throw RangeError("max-i " + std::to_string(options.max_i) + " exceeds the " +
                     std::to_string(freq.ranked_ids.size()) + " ranked training words");
  }
  std::vector<TokenSeq> responses;
  responses.reserve(samples.size());
  for (const TestSample& s : samples) responses.push_back(respond(s));

  MetricReport report;
  report.sample_count = samples.size();
  report.brevity_penalty = options.brevity_penalty;
  for (std::size_t i = 0; i <= options.max_i; ++i) report.accw[i] = accw(samples, responses, freq, i);
  for (std::size_t i = 1; i <= options.max_i; ++i) report.div[i] = div_i(responses, freq, i);

  CorpusBleu corpus;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    const TokenSeq candidate = detail::strip_eos(responses[k]);
    corpus.add(candidate, samples[k].references);
    std::array<double, kMaxBleuOrder> per{};
    for (std::size_t n = 1; n <= kMaxBleuOrder; ++n) {
      per[n - 1] = bleu_n(candidate, samples[k].references, n);
    }
    report.sample_bleu.push_back(per);
  }
  for (std::size_t n = 1; n <= kMaxBleuOrder; ++n) {
    report.bleu[n] = corpus.score(n, options.brevity_penalty);
  }
  return report;
}

// The frequency ranks must index the checkpoint's vocabulary.
inline void check_compatible(const Vocab& vocab, const FrequencyTable& freq,
                             std::span<const TestSample> samples) {
  if (freq.ranked.size() != freq.ranked_ids.size()) {
    throw CompatibilityError("frequency table is inconsistent");
  }
  for (std::size_t k = 0; k < freq.ranked.size(); ++k) {
    if (!vocab.contains(freq.ranked[k]) || vocab.id(freq.ranked[k]) != freq.ranked_ids[k]) {
      throw CompatibilityError("frequency table token '" + freq.ranked[k] +
                               "' does not match the model vocabulary");
    }
  }
  for (const TestSample& s : samples) {
    for (TokenId t : s.post) {
      if (t >= vocab.size()) throw CompatibilityError("test set token id outside the model vocabulary");
    }
  }
}

// Decodes the top-1 beam result for each sample and scores it.
inline MetricReport evaluate(const Checkpoint& model, std::span<const TestSample> samples,
                             const FrequencyTable& freq, const EvalOptions& options) {
  check_compatible(model.vocab, freq, samples);
  return evaluate(
      samples, freq,
      [&](const TestSample& s) {
        return beam_search(s.post, model.params, model.config, options.beam_width, options.max_len)
            .front()
            .tokens;
      },
      options);
}

inline std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << "samples=" << sample_count << '\n';
  for (const auto& [i, v] : accw) out << "accw-" << i << '=' << detail::fixed(v, 10) << '\n';
  for (const auto& [i, v] : div) out << "div-" << i << '=' << detail::fixed(v, 10) << '\n';
  for (const auto& [n, v] : bleu) out << "bleu-" << n << '=' << detail::fixed(v, 10) << '\n';
  out << "brevity_penalty=" << (brevity_penalty ? "on" : "off") << '\n';
  for (std::size_t k = 0; k < sample_bleu.size(); ++k) {
    for (std::size_t n = 0; n < kMaxBleuOrder; ++n) {
      out << "sample-" << k << ".bleu-" << (n + 1) << '=' << detail::fixed(sample_bleu[k][n], 10)
          << '\n';
    }
  }
  return out.str();
}

inline std::string MetricReport::curves_csv() const {
  std::ostringstream out;
  out << "i,accw,div\n";
  for (const auto& [i, v] : accw) {
    out << i << ',' << detail::fixed(v, 10) << ',';
    if (auto it = div.find(i); it != div.end()) out << detail::fixed(it->second, 10);
    out << '\n';
  }
  return out.str();
}

// Parses the key=value block written by MetricReport::to_text.
inline std::map<std::string, std::string> parse_report(std::istream& in) {
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("report line without '=': " + line);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace lts
