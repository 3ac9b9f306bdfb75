#pragma once

// GRU encoder-decoder with two ways of producing the first response word:
// feeding a start symbol through the decoder, or the learned first-word head
// that scores every decoder embedding against the encoder context.

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lts/corpus.hpp"
#include "lts/ndcore.hpp"

namespace lts {

enum class FirstWordMode { StartSymbol, Lts };
enum class ContextMode { LastHidden, Attention, Hybrid };
enum class Readout { Softmax, MaxoutSoftmax };

inline std::string_view to_string(FirstWordMode m) {
  return m == FirstWordMode::Lts ? "lts" : "start";
}
inline std::string_view to_string(ContextMode m) {
  switch (m) {
    case ContextMode::LastHidden: return "last";
    case ContextMode::Attention: return "attn";
    case ContextMode::Hybrid: return "hybrid";
  }
  return "?";
}
inline std::string_view to_string(Readout r) {
  return r == Readout::Softmax ? "softmax" : "maxout";
}

inline FirstWordMode parse_first_word_mode(std::string_view s) {
  if (s == "lts") return FirstWordMode::Lts;
  if (s == "start") return FirstWordMode::StartSymbol;
  throw FormatError("unknown first-word mode '" + std::string(s) + "'");
}
inline ContextMode parse_context_mode(std::string_view s) {
  if (s == "last") return ContextMode::LastHidden;
  if (s == "attn") return ContextMode::Attention;
  if (s == "hybrid") return ContextMode::Hybrid;
  throw FormatError("unknown context mode '" + std::string(s) + "'");
}
inline Readout parse_readout(std::string_view s) {
  if (s == "softmax") return Readout::Softmax;
  if (s == "maxout") return Readout::MaxoutSoftmax;
  throw FormatError("unknown readout '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 500;
  std::size_t hidden_dim = 1024;
  FirstWordMode first_word_mode = FirstWordMode::Lts;
  ContextMode context_mode = ContextMode::LastHidden;
  Readout readout = Readout::Softmax;

  void validate() const {
    if (vocab_size <= kSpecialCount) {
      throw ContractError("vocab_size must exceed the " + std::to_string(kSpecialCount) +
                          " special tokens");
    }
    if (embed_dim < 1 || hidden_dim < 1) throw ContractError("model dims must be >= 1");
  }

  bool uses_attention() const { return context_mode != ContextMode::LastHidden; }

  // Width of the context appended to the decoder input embedding.
  std::size_t context_width() const {
    return context_mode == ContextMode::Hybrid ? 2 * hidden_dim : hidden_dim;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Update gate, reset gate and candidate state; each with input, recurrent
// and bias terms.
struct GruWeights {
  Tensor update_input, update_recurrent, update_bias;
  Tensor reset_input, reset_recurrent, reset_bias;
  Tensor candidate_input, candidate_recurrent, candidate_bias;
};

struct ModelParams {
  Tensor encoder_embedding;  // [V x E]
  Tensor decoder_embedding;  // [V x E], also the first-word similarity table
  GruWeights encoder;        // input E
  GruWeights decoder;        // input E + context width
  Tensor init_weight;        // [H x H]
  Tensor init_bias;          // [H]
  Tensor first_word_weight;  // [E x H]
  Tensor first_word_bias;    // [E]
  Tensor first_word_output_bias;  // [V]
  Tensor attention_state;       // [H x H], attention modes only
  Tensor attention_annotation;  // [H x H], attention modes only
  Tensor attention_score;       // [H], attention modes only
  Tensor maxout_weight;  // [2H x H], maxout readout only
  Tensor maxout_bias;    // [2H], maxout readout only
  Tensor readout_weight;  // [V x H]
  Tensor readout_bias;    // [V]
};

struct ParamSpec {
  std::string name;
  Shape shape;
  bool bias;
  Tensor& (*slot)(ModelParams&);
  const Tensor& (*view)(const ModelParams&);
};

// The parameter census: names, shapes and storage slots, in checkpoint order.
// A pure function of the config.
inline std::vector<ParamSpec> param_layout(const ModelConfig& config) {
  config.validate();
  const std::size_t V = config.vocab_size, E = config.embed_dim, H = config.hidden_dim;
  std::vector<ParamSpec> out;
#define LTS_PARAM(name, rows, cols, is_bias, member) \
  out.push_back({name, {rows, cols}, is_bias,                           \
                 [](ModelParams& p) -> Tensor& { return p.member; },   \
                 [](const ModelParams& p) -> const Tensor& { return p.member; }})
  LTS_PARAM("encoder.embedding", V, E, false, encoder_embedding);
  LTS_PARAM("decoder.embedding", V, E, false, decoder_embedding);
#define LTS_GRU(prefix, side, in)                                                      \
  LTS_PARAM(prefix ".update.input", H, in, false, side.update_input);                  \
  LTS_PARAM(prefix ".update.recurrent", H, H, false, side.update_recurrent);           \
  LTS_PARAM(prefix ".update.bias", H, 1, true, side.update_bias);                      \
  LTS_PARAM(prefix ".reset.input", H, in, false, side.reset_input);                    \
  LTS_PARAM(prefix ".reset.recurrent", H, H, false, side.reset_recurrent);             \
  LTS_PARAM(prefix ".reset.bias", H, 1, true, side.reset_bias);                        \
  LTS_PARAM(prefix ".candidate.input", H, in, false, side.candidate_input);            \
  LTS_PARAM(prefix ".candidate.recurrent", H, H, false, side.candidate_recurrent);     \
  LTS_PARAM(prefix ".candidate.bias", H, 1, true, side.candidate_bias)
  LTS_GRU("encoder.gru", encoder, E);
  const std::size_t dec_in = E + config.context_width();
  LTS_GRU("decoder.gru", decoder, dec_in);
#undef LTS_GRU
  LTS_PARAM("decoder.init.weight", H, H, false, init_weight);
  LTS_PARAM("decoder.init.bias", H, 1, true, init_bias);
  LTS_PARAM("first_word.weight", E, H, false, first_word_weight);
  LTS_PARAM("first_word.bias", E, 1, true, first_word_bias);
  LTS_PARAM("first_word.output_bias", V, 1, true, first_word_output_bias);
  if (config.uses_attention()) {
    LTS_PARAM("attention.state", H, H, false, attention_state);
    LTS_PARAM("attention.annotation", H, H, false, attention_annotation);
    LTS_PARAM("attention.score", H, 1, false, attention_score);
  }
  if (config.readout == Readout::MaxoutSoftmax) {
    LTS_PARAM("readout.maxout.weight", 2 * H, H, false, maxout_weight);
    LTS_PARAM("readout.maxout.bias", 2 * H, 1, true, maxout_bias);
  }
  LTS_PARAM("readout.weight", V, H, false, readout_weight);
  LTS_PARAM("readout.bias", V, 1, true, readout_bias);
#undef LTS_PARAM
  return out;
}

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

inline std::vector<NamedTensor> census(ModelParams& params, const ModelConfig& config) {
  std::vector<NamedTensor> out;
  for (const ParamSpec& spec : param_layout(config)) {
    out.push_back({spec.name, &spec.slot(params)});
  }
  return out;
}

inline std::vector<Tensor*> tensors(ModelParams& params, const ModelConfig& config) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : census(params, config)) out.push_back(t);
  return out;
}

// Uniform bits -> [0, 1), independent of the standard library's distributions
// so parameter draws are identical across platforms.
inline double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline constexpr double kInitRange = 0.08;

// Weights uniform in [-0.08, 0.08], biases zero.
inline ModelParams make_params(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams params;
  for (const ParamSpec& spec : param_layout(config)) {
    Tensor t = Tensor::zeros(spec.shape.rows, spec.shape.cols);
    if (!spec.bias) {
      for (double& v : t.values()) v = (2.0 * unit_uniform(rng) - 1.0) * kInitRange;
    }
    spec.slot(params) = std::move(t);
  }
  return params;
}

inline ModelParams zero_params(const ModelConfig& config) {
  ModelParams params;
  for (const ParamSpec& spec : param_layout(config)) {
    spec.slot(params) = Tensor::zeros(spec.shape.rows, spec.shape.cols);
  }
  return params;
}

inline void zero_grads(ModelParams& params, const ModelConfig& config) {
  for (Tensor* t : tensors(params, config)) {
    t->grad();
    t->zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Graph-level model, recorded on a tape.

struct GruVars {
  Var update_input, update_recurrent, update_bias;
  Var reset_input, reset_recurrent, reset_bias;
  Var candidate_input, candidate_recurrent, candidate_bias;
};

struct ModelVars {
  ModelConfig config;
  Var encoder_embedding, decoder_embedding;
  GruVars encoder, decoder;
  Var init_weight, init_bias;
  Var first_word_weight, first_word_bias, first_word_output_bias;
  Var attention_state, attention_annotation, attention_score;
  Var maxout_weight, maxout_bias;
  Var readout_weight, readout_bias;
};

namespace detail {

template <typename Params, typename Binder>
ModelVars bind_all(Params& p, const ModelConfig& config, Binder bind) {
  auto gru = [&](auto& w) {
    return GruVars{bind(w.update_input),    bind(w.update_recurrent),    bind(w.update_bias),
                   bind(w.reset_input),     bind(w.reset_recurrent),     bind(w.reset_bias),
                   bind(w.candidate_input), bind(w.candidate_recurrent), bind(w.candidate_bias)};
  };
  ModelVars m;
  m.config = config;
  m.encoder_embedding = bind(p.encoder_embedding);
  m.decoder_embedding = bind(p.decoder_embedding);
  m.encoder = gru(p.encoder);
  m.decoder = gru(p.decoder);
  m.init_weight = bind(p.init_weight);
  m.init_bias = bind(p.init_bias);
  m.first_word_weight = bind(p.first_word_weight);
  m.first_word_bias = bind(p.first_word_bias);
  m.first_word_output_bias = bind(p.first_word_output_bias);
  if (config.uses_attention()) {
    m.attention_state = bind(p.attention_state);
    m.attention_annotation = bind(p.attention_annotation);
    m.attention_score = bind(p.attention_score);
  }
  if (config.readout == Readout::MaxoutSoftmax) {
    m.maxout_weight = bind(p.maxout_weight);
    m.maxout_bias = bind(p.maxout_bias);
  }
  m.readout_weight = bind(p.readout_weight);
  m.readout_bias = bind(p.readout_bias);
  return m;
}

}  // namespace detail

// Trainable binding: gradients flow into `params`.
inline ModelVars bind(Tape& tape, ModelParams& params, const ModelConfig& config) {
  return detail::bind_all(params, config, [&](Tensor& t) { return tape.variable(t); });
}

// Read-only binding for inference.
inline ModelVars bind(Tape& tape, const ModelParams& params, const ModelConfig& config) {
  return detail::bind_all(params, config, [&](const Tensor& t) { return tape.view(t); });
}

inline GruVars bind(Tape& tape, GruWeights& w) {
  return {tape.variable(w.update_input),    tape.variable(w.update_recurrent),
          tape.variable(w.update_bias),     tape.variable(w.reset_input),
          tape.variable(w.reset_recurrent), tape.variable(w.reset_bias),
          tape.variable(w.candidate_input), tape.variable(w.candidate_recurrent),
          tape.variable(w.candidate_bias)};
}

// z = sig(Wz x + Uz h + bz); r = sig(Wr x + Ur h + br);
// h~ = tanh(Wh x + Uh (r . h) + bh); h' = (1 - z) . h + z . h~
inline Var gru_cell(Var x, Var h, const GruVars& w) {
  Var z = sigmoid(add(add(matmul(w.update_input, x), matmul(w.update_recurrent, h)),
                      w.update_bias));
  Var r = sigmoid(add(add(matmul(w.reset_input, x), matmul(w.reset_recurrent, h)),
                      w.reset_bias));
  Var candidate = tanh(add(add(matmul(w.candidate_input, x),
                               matmul(w.candidate_recurrent, hadamard(r, h))),
                           w.candidate_bias));
  return add(hadamard(one_minus(z), h), hadamard(z, candidate));
}

struct EncoderGraph {
  Var annotations;  // [T x H]
  Var context;      // [H x 1], the last annotation
  std::size_t length = 0;
};

inline EncoderGraph encode(const ModelVars& m, std::span<const TokenId> post) {
  if (post.empty()) throw ContractError("encode: empty input sequence");
  Tape& tape = *m.encoder_embedding.tape();
  Var h = tape.constant(Tensor::zeros(m.config.hidden_dim, 1));
  std::vector<Var> states;
  states.reserve(post.size());
  for (TokenId id : post) {
    h = gru_cell(row(m.encoder_embedding, id), h, m.encoder);
    states.push_back(h);
  }
  return {stack_rows(states), states.back(), post.size()};
}

// s0 = tanh(Ws c + bs)
inline Var init_decoder(const ModelVars& m, const EncoderGraph& enc) {
  return tanh(add(matmul(m.init_weight, enc.context), m.init_bias));
}

struct AttentionGraph {
  Var context;  // [H x 1]
  Var weights;  // [T x 1]
};

// e_i = v . tanh(Wa s + Ua h_i); alpha = softmax(e); c = sum_i alpha_i h_i
inline AttentionGraph attention_context(const ModelVars& m, Var previous_state,
                                        const EncoderGraph& enc) {
  Var projected_state = matmul(m.attention_state, previous_state);
  Var score_row = transpose(m.attention_score);
  std::vector<Var> scores;
  scores.reserve(enc.length);
  for (std::size_t i = 0; i < enc.length; ++i) {
    Var hidden = tanh(add(projected_state, matmul(m.attention_annotation, row(enc.annotations, i))));
    scores.push_back(matmul(score_row, hidden));
  }
  Var weights = softmax(concat(scores));
  return {matmul(transpose(enc.annotations), weights), weights};
}

struct StepGraph {
  Var state;
  Var distribution;
};

inline Var readout_distribution(const ModelVars& m, Var state) {
  Var features = state;
  if (m.config.readout == Readout::MaxoutSoftmax) {
    features = maxout(add(matmul(m.maxout_weight, state), m.maxout_bias));
  }
  return softmax(add(matmul(m.readout_weight, features), m.readout_bias));
}

// One decoder step: input is the previous word embedding concatenated with
// the configured context (last hidden, attention, or both).
inline StepGraph decode_step(const ModelVars& m, Var previous_state, TokenId previous_word,
                             const EncoderGraph& enc) {
  if (previous_word >= m.config.vocab_size) {
    throw IndexError("decode_step: token id " + std::to_string(previous_word) +
                     " out of range for vocabulary of " + std::to_string(m.config.vocab_size));
  }
  Var embedded = row(m.decoder_embedding, previous_word);
  Var input;
  switch (m.config.context_mode) {
    case ContextMode::LastHidden:
      input = concat({embedded, enc.context});
      break;
    case ContextMode::Attention:
      input = concat({embedded, attention_context(m, previous_state, enc).context});
      break;
    case ContextMode::Hybrid:
      input = concat({embedded, enc.context, attention_context(m, previous_state, enc).context});
      break;
  }
  Var state = gru_cell(input, previous_state, m.decoder);
  return {state, readout_distribution(m, state)};
}

// softmax(E_dec (tanh(Wi c) + bi) + be)
inline Var lts_first_word(const ModelVars& m, const EncoderGraph& enc) {
  Var inner = add(tanh(matmul(m.first_word_weight, enc.context)), m.first_word_bias);
  return softmax(add(matmul(m.decoder_embedding, inner), m.first_word_output_bias));
}

// The single dispatch point for the first word. Returns the decoder state the
// second word is generated from, and the first-word distribution.
inline StepGraph first_word_step(const ModelVars& m, const EncoderGraph& enc) {
  Var s0 = init_decoder(m, enc);
  if (m.config.first_word_mode == FirstWordMode::Lts) return {s0, lts_first_word(m, enc)};
  return decode_step(m, s0, kStartId, enc);
}

// ---------------------------------------------------------------------------
// Value-level model for inference and tests.

struct EncoderOutput {
  Tensor annotations;  // [T x H]
  Tensor context;      // [H x 1]
};

struct DecoderState {
  Tensor state;  // [H x 1]
  std::size_t step = 0;
};

struct AttentionOutput {
  Tensor context;
  Tensor weights;
};

namespace detail {

inline Tensor take(Var v) {
  Tensor t = v.value();
  t.drop_grad();
  return t;
}

inline EncoderGraph view_encoder(Tape& tape, const EncoderOutput& enc) {
  return {tape.view(enc.annotations), tape.view(enc.context), enc.annotations.rows()};
}

}  // namespace detail

inline Tensor gru_cell(const Tensor& x, const Tensor& h, const GruWeights& w) {
  Tape tape(false);
  GruVars vars{tape.view(w.update_input),    tape.view(w.update_recurrent),
               tape.view(w.update_bias),     tape.view(w.reset_input),
               tape.view(w.reset_recurrent), tape.view(w.reset_bias),
               tape.view(w.candidate_input), tape.view(w.candidate_recurrent),
               tape.view(w.candidate_bias)};
  return detail::take(gru_cell(tape.view(x), tape.view(h), vars));
}

inline EncoderOutput encode(std::span<const TokenId> post, const ModelParams& params,
                            const ModelConfig& config) {
  Tape tape(false);
  const ModelVars m = bind(tape, params, config);
  EncoderGraph g = encode(m, post);
  return {detail::take(g.annotations), detail::take(g.context)};
}

inline DecoderState init_decoder(const EncoderOutput& enc, const ModelParams& params,
                                 const ModelConfig& config) {
  Tape tape(false);
  const ModelVars m = bind(tape, params, config);
  return {detail::take(init_decoder(m, detail::view_encoder(tape, enc))), 0};
}

inline AttentionOutput attention_context(const Tensor& previous_state, const Tensor& annotations,
                                         const ModelParams& params, const ModelConfig& config) {
  if (!config.uses_attention()) {
    throw ContractError("attention_context: model has no attention parameters");
  }
  if (annotations.rows() == 0) throw ContractError("attention_context: no annotations");
  Tape tape(false);
  const ModelVars m = bind(tape, params, config);
  EncoderGraph enc{tape.view(annotations), Var(), annotations.rows()};
  AttentionGraph g = attention_context(m, tape.view(previous_state), enc);
  return {detail::take(g.context), detail::take(g.weights)};
}

inline std::pair<DecoderState, Tensor> decode_step(const DecoderState& state, TokenId previous_word,
                                                   const EncoderOutput& enc,
                                                   const ModelParams& params,
                                                   const ModelConfig& config) {
  Tape tape(false);
  const ModelVars m = bind(tape, params, config);
  StepGraph g = decode_step(m, tape.view(state.state), previous_word, detail::view_encoder(tape, enc));
  return {DecoderState{detail::take(g.state), state.step + 1}, detail::take(g.distribution)};
}

inline Tensor lts_first_word(const EncoderOutput& enc, const ModelParams& params,
                             const ModelConfig& config) {
  Tape tape(false);
  const ModelVars m = bind(tape, params, config);
  return detail::take(lts_first_word(m, detail::view_encoder(tape, enc)));
}

inline std::pair<DecoderState, Tensor> first_word_step(const EncoderOutput& enc,
                                                       const ModelParams& params,
                                                       const ModelConfig& config) {
  Tape tape(false);
  const ModelVars m = bind(tape, params, config);
  StepGraph g = first_word_step(m, detail::view_encoder(tape, enc));
  const std::size_t step = config.first_word_mode == FirstWordMode::Lts ? 0 : 1;
  return {DecoderState{detail::take(g.state), step}, detail::take(g.distribution)};
}

inline Tensor first_word_distribution(const EncoderOutput& enc, const ModelParams& params,
                                      const ModelConfig& config) {
  return first_word_step(enc, params, config).second;
}

}  // namespace lts
