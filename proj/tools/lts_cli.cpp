// Command-line front end: train, generate, eval, chat, synth.
//
// Exit codes: 0 success, 1 runtime error, 2 usage error.

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "lts/lts.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Thrown for argument problems detected after parsing (cross-flag checks).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw lts::IoError("cannot write " + path.string());
  out << text;
  out.close();
  if (!out) throw lts::IoError("failed writing " + path.string());
}

lts::TokenSeq encode_post(const lts::Vocab& vocab, const std::string& line) {
  return lts::detail::with_eos(vocab.encode(lts::split_tokens(line)));
}

// Reads posts line by line from a file or stdin.
template <typename F>
void for_each_line(const std::string& input, F&& f) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (input != "-") {
    file.open(input);
    if (!file) throw lts::IoError("cannot open input " + input);
    in = &file;
  }
  std::string line;
  while (std::getline(*in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!f(line)) break;
  }
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string corpus;
  std::string out;
  std::string profile = "desk";
  std::size_t hidden = 64;
  std::size_t embed = 32;
  std::size_t batch = 16;
  std::size_t epochs = 10;
  std::size_t vocab_cap = 35000;
  std::string mode = "lts";
  std::string context = "last";
  std::string readout = "softmax";
  double lr = 1e-3;
  double clip = 5.0;
  std::uint64_t seed = 1;
};

void add_train(CLI::App& app, TrainArgs& a, CLI::App*& sub) {
  sub = app.add_subcommand("train", "Train a model on a tab-separated post/response corpus");
  sub->add_option("--corpus", a.corpus, "Training corpus (post<TAB>response per line)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "Output directory for checkpoints")->required();
  sub->add_option("--profile", a.profile, "Size preset: desk (64/32/16) or full (1024/500/100)")
      ->check(CLI::IsMember({"desk", "full"}));
  sub->add_option("--hidden", a.hidden, "Hidden size")->check(CLI::PositiveNumber);
  sub->add_option("--embed", a.embed, "Embedding size")->check(CLI::PositiveNumber);
  sub->add_option("--batch", a.batch, "Mini-batch size")->check(CLI::PositiveNumber);
  sub->add_option("--epochs", a.epochs, "Number of epochs")->check(CLI::NonNegativeNumber);
  sub->add_option("--vocab-cap", a.vocab_cap, "Keep the N most frequent tokens")
      ->check(CLI::PositiveNumber);
  sub->add_option("--mode", a.mode, "First-word mechanism")->check(CLI::IsMember({"lts", "start"}));
  sub->add_option("--context", a.context, "Decoder context")
      ->check(CLI::IsMember({"last", "attn", "hybrid"}));
  sub->add_option("--readout", a.readout, "Output layer")->check(CLI::IsMember({"softmax", "maxout"}));
  sub->add_option("--lr", a.lr, "Learning rate")->check(CLI::PositiveNumber);
  sub->add_option("--clip", a.clip, "Global gradient-norm clip (0 disables)")
      ->check(CLI::NonNegativeNumber);
  sub->add_option("--seed", a.seed, "Random seed");
}

int run_train(const CLI::App& sub, TrainArgs a) {
  if (a.profile == "full") {
    if (!sub.count("--hidden")) a.hidden = 1024;
    if (!sub.count("--embed")) a.embed = 500;
    if (!sub.count("--batch")) a.batch = 100;
  }
  const lts::Corpus corpus = lts::load_pairs(a.corpus, a.vocab_cap);
  lts::ModelConfig mc;
  mc.vocab_size = corpus.vocab.size();
  mc.embed_dim = a.embed;
  mc.hidden_dim = a.hidden;
  mc.first_word_mode = lts::parse_first_word_mode(a.mode);
  mc.context_mode = lts::parse_context_mode(a.context);
  mc.readout = lts::parse_readout(a.readout);
  mc.validate();

  lts::TrainConfig tc;
  tc.batch_size = a.batch;
  tc.epochs = a.epochs;
  tc.learning_rate = a.lr;
  tc.seed = a.seed;
  if (a.clip > 0.0) {
    tc.clip_norm = a.clip;
  } else {
    tc.clip_norm.reset();
  }
  tc.validate();

  fs::create_directories(a.out);
  lts::ModelParams params = lts::make_params(mc, a.seed);
  lts::TrainOptions opts;
  opts.checkpoint_dir = fs::path(a.out);
  opts.on_epoch = [](std::size_t epoch, double loss) {
    std::cout << "epoch=" << epoch << " loss=" << fmt("%.6f", loss) << '\n' << std::flush;
  };
  lts::train(corpus.pairs, params, mc, tc, corpus.vocab, opts);
  // Zero epochs still leaves a loadable model behind.
  if (a.epochs == 0) lts::save_checkpoint(params, mc, corpus.vocab, fs::path(a.out) / "model.ckpt");
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string model;
  std::string input = "-";
  std::size_t beam = lts::kDefaultBeamWidth;
  std::size_t nbest = 1;
  std::size_t max_len = lts::kDefaultMaxLen;
};

void add_generate(CLI::App& app, GenerateArgs& a, CLI::App*& sub) {
  sub = app.add_subcommand("generate", "Print the N-best responses for each input post");
  sub->add_option("--model", a.model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sub->add_option("--input", a.input, "Posts, one per line ('-' for stdin)");
  sub->add_option("--beam", a.beam, "Beam width")->check(CLI::PositiveNumber);
  sub->add_option("--nbest", a.nbest, "Results per post")->check(CLI::PositiveNumber);
  sub->add_option("--max-len", a.max_len, "Maximum response length")->check(CLI::PositiveNumber);
}

int run_generate(const GenerateArgs& a) {
  if (a.nbest > a.beam) throw UsageError("--nbest must not exceed --beam");
  if (a.input != "-" && !fs::is_regular_file(a.input)) {
    throw UsageError("--input: file does not exist: " + a.input);
  }
  const lts::Checkpoint ckpt = lts::load_checkpoint(a.model);
  for_each_line(a.input, [&](const std::string& line) {
    if (lts::split_tokens(line).empty()) return true;
    const auto results =
        lts::beam_search(encode_post(ckpt.vocab, line), ckpt.params, ckpt.config, a.beam, a.max_len);
    for (std::size_t k = 0; k < std::min(a.nbest, results.size()); ++k) {
      std::cout << (k + 1) << '\t' << fmt("%.6f", results[k].logprob) << '\t'
                << lts::join_tokens(ckpt.vocab, results[k].tokens) << '\n';
    }
    return true;
  });
  std::cout << std::flush;
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model;
  std::string test;
  std::string freq_from;
  std::string report;
  std::string csv;
  std::string annotations;
  std::size_t max_i = 10;
  std::size_t beam = lts::kDefaultBeamWidth;
  std::size_t max_len = lts::kDefaultMaxLen;
  bool brevity = false;
};

void add_eval(CLI::App& app, EvalArgs& a, CLI::App*& sub) {
  sub = app.add_subcommand("eval", "Score a checkpoint on a multi-reference test set");
  sub->add_option("--model", a.model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sub->add_option("--test", a.test, "Test set (post<TAB>ref1<TAB>ref2...)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--freq-from", a.freq_from, "Training corpus used for frequency ranks")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--report", a.report, "Report output path")->required();
  sub->add_option("--csv", a.csv, "Also write accw/div curves as CSV");
  sub->add_option("--annotations", a.annotations, "Human scores (item<TAB>rater<TAB>score)")
      ->check(CLI::ExistingFile);
  sub->add_option("--max-i", a.max_i, "Largest i for accw-i and div-i");
  sub->add_option("--beam", a.beam, "Beam width")->check(CLI::PositiveNumber);
  sub->add_option("--max-len", a.max_len, "Maximum response length")->check(CLI::PositiveNumber);
  sub->add_flag("--brevity-penalty", a.brevity, "Apply the corpus brevity penalty to BLEU");
}

int run_eval(const EvalArgs& a) {
  const lts::Checkpoint ckpt = lts::load_checkpoint(a.model);
  // The frequency ranks are rebuilt with the checkpoint's vocabulary cap.
  const lts::Corpus train = lts::load_pairs(a.freq_from, ckpt.vocab.size() - lts::kSpecialCount);
  if (a.max_i > train.frequency.ranked.size()) {
    throw UsageError("--max-i " + std::to_string(a.max_i) + " is out of range: only " +
                     std::to_string(train.frequency.ranked.size()) + " ranked training words");
  }
  const auto samples = lts::load_test_set(a.test, ckpt.vocab);
  std::optional<lts::AnnotationSummary> human;
  if (!a.annotations.empty()) human = lts::summarize_annotations(lts::load_annotations(a.annotations));

  lts::EvalOptions opts;
  opts.max_i = a.max_i;
  opts.beam_width = a.beam;
  opts.max_len = a.max_len;
  opts.brevity_penalty = a.brevity;
  const lts::MetricReport report = lts::evaluate(ckpt, samples, train.frequency, opts);

  std::string text = report.to_text();
  if (human) {
    text += "annotation.kappa=" + fmt("%.10f", human->kappa) + '\n';
    text += "annotation.mean=" + fmt("%.10f", human->mean_score) + '\n';
    for (int s = 0; s < lts::kAnnotationLevels; ++s) {
      text += "annotation.ratio-" + std::to_string(s) + '=' +
              fmt("%.10f", human->ratio[static_cast<std::size_t>(s)]) + '\n';
    }
  }
  write_file(a.report, text);
  if (!a.csv.empty()) write_file(a.csv, report.curves_csv());

  std::cout << "samples " << report.sample_count << '\n';
  for (const auto& [i, v] : report.accw) std::cout << "accw-" << i << '\t' << fmt("%.3f", v) << '\n';
  for (const auto& [i, v] : report.div) std::cout << "div-" << i << '\t' << fmt("%.3f", v) << '\n';
  for (const auto& [n, v] : report.bleu) std::cout << "bleu-" << n << '\t' << fmt("%.4f", v) << '\n';
  if (human) {
    std::cout << "kappa\t" << fmt("%.3f", human->kappa) << '\n';
    std::cout << "mean-score\t" << fmt("%.3f", human->mean_score) << '\n';
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ChatArgs {
  std::string model;
  std::size_t beam = lts::kDefaultBeamWidth;
  std::size_t max_len = lts::kDefaultMaxLen;
};

void add_chat(CLI::App& app, ChatArgs& a, CLI::App*& sub) {
  sub = app.add_subcommand("chat", "Reply to posts typed on stdin (':quit' to exit)");
  sub->add_option("--model", a.model, "Checkpoint file")->required()->check(CLI::ExistingFile);
  sub->add_option("--beam", a.beam, "Beam width")->check(CLI::PositiveNumber);
  sub->add_option("--max-len", a.max_len, "Maximum response length")->check(CLI::PositiveNumber);
}

int run_chat(const ChatArgs& a) {
  const lts::Checkpoint ckpt = lts::load_checkpoint(a.model);
  const bool interactive = isatty(STDIN_FILENO) != 0;
  auto prompt = [&] {
    if (interactive) std::cerr << "> " << std::flush;
  };
  prompt();
  std::string line;
  while (std::getline(std::cin, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == ":quit") break;
    try {
      if (lts::split_tokens(line).empty()) {
        std::cout << '\n';
      } else {
        const auto best = lts::beam_search(encode_post(ckpt.vocab, line), ckpt.params, ckpt.config,
                                           a.beam, a.max_len);
        std::cout << lts::join_tokens(ckpt.vocab, best.front().tokens) << '\n';
      }
    } catch (const lts::Error& e) {
      std::cerr << "error: " << e.what() << '\n';
      std::cout << '\n';
    }
    std::cout << std::flush;
    prompt();
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string test_out;
  std::string rule = "keyword-first-word";
  lts::SynthConfig config;
  std::size_t test_samples = 200;
  std::size_t references = 3;
};

void add_synth(CLI::App& app, SynthArgs& a, CLI::App*& sub) {
  sub = app.add_subcommand("synth", "Write a synthetic keyword-rule dialogue corpus");
  sub->add_option("--out", a.out, "Corpus output path")->required();
  sub->add_option("--pairs", a.config.pairs, "Number of pairs")->check(CLI::PositiveNumber);
  sub->add_option("--vocab", a.config.vocab, "Word types (keywords + rule words + fillers)")
      ->check(CLI::PositiveNumber);
  sub->add_option("--skew", a.config.skew, "Probability of forcing rule class 0")
      ->check(CLI::Range(0.0, 1.0));
  sub->add_option("--classes", a.config.classes, "Number of rule classes")->check(CLI::PositiveNumber);
  sub->add_option("--rule", a.rule, "Generation rule")->check(CLI::IsMember({"keyword-first-word"}));
  sub->add_option("--seed", a.config.seed, "Random seed");
  sub->add_option("--test-out", a.test_out, "Also write a held-out multi-reference test set");
  sub->add_option("--test-samples", a.test_samples, "Test samples")->check(CLI::PositiveNumber);
  sub->add_option("--references", a.references, "References per test sample")
      ->check(CLI::PositiveNumber);
}

// The held-out set uses its own RNG stream so it never replays the corpus.
inline std::uint64_t test_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

int run_synth(const SynthArgs& a) {
  try {
    a.config.validate();
  } catch (const lts::ContractError& e) {
    throw UsageError(e.what());
  }
  write_file(a.out, lts::synthesize_corpus(a.config));
  if (!a.test_out.empty()) {
    lts::SynthConfig held_out = a.config;
    held_out.seed = test_seed(a.config.seed);
    write_file(a.test_out, lts::synthesize_test_set(held_out, a.test_samples, a.references));
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"First-word-aware sequence-to-sequence dialogue models", "lts"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  TrainArgs train_args;
  GenerateArgs generate_args;
  EvalArgs eval_args;
  ChatArgs chat_args;
  SynthArgs synth_args;
  CLI::App *train = nullptr, *generate = nullptr, *eval = nullptr, *chat = nullptr, *synth = nullptr;
  add_train(app, train_args, train);
  add_generate(app, generate_args, generate);
  add_eval(app, eval_args, eval);
  add_chat(app, chat_args, chat);
  add_synth(app, synth_args, synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) return run_train(*train, train_args);
    if (*generate) return run_generate(generate_args);
    if (*eval) return run_eval(eval_args);
    if (*chat) return run_chat(chat_args);
    if (*synth) return run_synth(synth_args);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
