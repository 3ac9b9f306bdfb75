#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "lts/checkpoint.hpp"
#include "lts/corpus.hpp"
#include "lts/model.hpp"
#include "lts/ndcore.hpp"

namespace lts {

struct TrainConfig {
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double rmsprop_decay = 0.95;
  double rmsprop_eps = 1e-6;
  std::size_t epochs = 10;
  std::optional<double> clip_norm = 5.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw ContractError("batch_size must be >= 1");
    if (!(rmsprop_decay > 0.0 && rmsprop_decay < 1.0)) {
      throw ContractError("rmsprop_decay must lie in (0, 1)");
    }
    if (!(rmsprop_eps > 0.0)) throw ContractError("rmsprop_eps must be > 0");
    if (!(learning_rate > 0.0)) throw ContractError("learning_rate must be > 0");
    if (clip_norm && !(*clip_norm > 0.0)) throw ContractError("clip_norm must be > 0");
  }
};

// Running mean of squared gradients, one buffer per parameter tensor.
struct OptimizerState {
  std::vector<std::vector<double>> mean_square;

  static OptimizerState for_params(std::span<Tensor* const> params) {
    OptimizerState s;
    for (const Tensor* p : params) s.mean_square.emplace_back(p->size(), 0.0);
    return s;
  }
};

// Teacher-forced loss of one pair, recorded on the tape: the first response
// word under the first-word distribution, then every later word (EOS included)
// under decode_step fed the gold previous word. Normalized by response length.
inline Var sequence_loss(const ModelVars& m, const DialoguePair& pair) {
  const TokenSeq& response = pair.response;
  if (response.empty() || response.back() != kEosId) {
    throw ContractError("sequence_loss: response must be non-empty and EOS-terminated");
  }
  EncoderGraph enc = encode(m, pair.post);
  StepGraph step = first_word_step(m, enc);
  Var total = cross_entropy(step.distribution, response[0]);
  for (std::size_t t = 1; t < response.size(); ++t) {
    step = decode_step(m, step.state, response[t - 1], enc);
    total = add(total, cross_entropy(step.distribution, response[t]));
  }
  return scale(total, 1.0 / static_cast<double>(response.size()));
}

inline double sequence_loss(const DialoguePair& pair, const ModelParams& params,
                            const ModelConfig& config) {
  Tape tape(false);
  return sequence_loss(bind(tape, params, config), pair).value()[0];
}

// acc <- rho acc + (1 - rho) g^2;  theta <- theta - lr g / sqrt(acc + eps).
// Gradients are read from each tensor's grad(), optionally rescaled to the
// global clip norm first. Nothing is updated if any gradient is non-finite.
inline void rmsprop_step(std::span<Tensor* const> params, OptimizerState& state,
                         const TrainConfig& config) {
  if (state.mean_square.size() != params.size()) {
    throw ContractError("rmsprop_step: optimizer census does not match parameters");
  }
  double norm_sq = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    if (state.mean_square[k].size() != p.size()) {
      throw ContractError("rmsprop_step: optimizer buffer shape mismatch");
    }
    for (double g : p.grad()) {
      if (!std::isfinite(g)) throw NumericError("rmsprop_step: non-finite gradient");
      norm_sq += g * g;
    }
  }
  double factor = 1.0;
  if (config.clip_norm) {
    const double norm = std::sqrt(norm_sq);
    if (norm > *config.clip_norm) factor = *config.clip_norm / norm;
  }
  const double rho = config.rmsprop_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    std::span<double> grad = p.grad();
    std::vector<double>& acc = state.mean_square[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = grad[i] * factor;
      acc[i] = rho * acc[i] + (1.0 - rho) * g * g;
      p[i] -= config.learning_rate * g / std::sqrt(acc[i] + config.rmsprop_eps);
    }
  }
}

// Fisher-Yates with a fixed integer mapping, so the order depends only on the
// seed and not on the standard library.
inline void seeded_shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
}

struct TrainReport {
  std::vector<double> epoch_loss;  // mean pair loss per epoch
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;
  std::function<void(std::size_t epoch, double loss)> on_epoch;
};

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir,
                                                   std::size_t epoch) {
  return dir / ("epoch-" + std::to_string(epoch) + ".ckpt");
}

// Mini-batch training. Each epoch reshuffles with the seeded RNG; each batch
// minimizes the mean pair loss with one RMSprop step. Writes
// `epoch-<k>.ckpt` and `model.ckpt` into the checkpoint directory, if given.
inline TrainReport train(const std::vector<DialoguePair>& corpus, ModelParams& params,
                         const ModelConfig& model_config, const TrainConfig& train_config,
                         const Vocab& vocab, const TrainOptions& options = {}) {
  if (corpus.empty()) throw ContractError("train: corpus is empty");
  model_config.validate();
  train_config.validate();
  const std::vector<Tensor*> weights = tensors(params, model_config);
  OptimizerState optimizer = OptimizerState::for_params(weights);
  std::mt19937_64 rng(train_config.seed);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainReport report;
  for (std::size_t epoch = 1; epoch <= train_config.epochs; ++epoch) {
    seeded_shuffle(order, rng);
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_config.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_config.batch_size);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      zero_grads(params, model_config);
      for (std::size_t b = start; b < end; ++b) {
        Tape tape;
        const ModelVars m = bind(tape, params, model_config);
        Var loss = sequence_loss(m, corpus[order[b]]);
        epoch_total += loss.value()[0];
        tape.backward(scale(loss, inv_batch));
      }
      rmsprop_step(weights, optimizer, train_config);
    }
    const double mean = epoch_total / static_cast<double>(corpus.size());
    if (!std::isfinite(mean)) throw NumericError("train: non-finite epoch loss");
    report.epoch_loss.push_back(mean);
    if (options.on_epoch) options.on_epoch(epoch, mean);
    if (options.checkpoint_dir) {
      save_checkpoint(params, model_config, vocab,
                      epoch_checkpoint_path(*options.checkpoint_dir, epoch));
      save_checkpoint(params, model_config, vocab, *options.checkpoint_dir / "model.ckpt");
    }
  }
  for (Tensor* t : weights) t->drop_grad();
  return report;
}

}  // namespace lts
