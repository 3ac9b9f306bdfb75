#pragma once

// Checkpoint layout:
//
//   "LTSCKPT1"                      8 bytes
//   metadata length                 uint64, little-endian
//   metadata                        UTF-8 text, one key=value per line
//   arrays                          float32 little-endian, manifest order
//
// Metadata keys: version, vocab_size, embed_dim, hidden_dim,
// first_word_mode, context_mode, readout, one `token=` line per vocabulary
// entry in id order, and one `array=<name> <rows> <cols> <offset>` line per
// parameter (offset in bytes from the start of the array section).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lts/corpus.hpp"
#include "lts/model.hpp"

namespace lts {

inline constexpr std::string_view kCheckpointMagic = "LTSCKPT1";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  Vocab vocab;
  ModelParams params;
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  }
  return v;
}

inline void put_f32(std::string& out, double value) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(value));
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline float get_f32(const char* in) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

inline std::size_t parse_count(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::logic_error&) {
    throw CheckpointError("checkpoint metadata: bad value for " + key + ": '" + text + "'");
  }
}

}  // namespace detail

inline std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& config,
                                        const Vocab& vocab) {
  config.validate();
  if (vocab.size() != config.vocab_size) {
    throw ContractError("save_checkpoint: vocabulary has " + std::to_string(vocab.size()) +
                        " entries but the model expects " + std::to_string(config.vocab_size));
  }
  std::ostringstream meta;
  meta << "version=" << kCheckpointVersion << '\n'
       << "vocab_size=" << config.vocab_size << '\n'
       << "embed_dim=" << config.embed_dim << '\n'
       << "hidden_dim=" << config.hidden_dim << '\n'
       << "first_word_mode=" << to_string(config.first_word_mode) << '\n'
       << "context_mode=" << to_string(config.context_mode) << '\n'
       << "readout=" << to_string(config.readout) << '\n';
  for (const std::string& tok : vocab.tokens()) meta << "token=" << tok << '\n';

  std::string data;
  for (const ParamSpec& spec : param_layout(config)) {
    const Tensor& t = spec.view(params);
    if (!(t.shape() == spec.shape)) {
      throw DimensionError("save_checkpoint: " + spec.name + " has shape " + t.shape().str() +
                           ", expected " + spec.shape.str());
    }
    meta << "array=" << spec.name << ' ' << spec.shape.rows << ' ' << spec.shape.cols << ' '
         << data.size() << '\n';
    for (double v : t.values()) detail::put_f32(data, v);
  }

  const std::string text = meta.str();
  std::string out(kCheckpointMagic);
  detail::put_u64(out, text.size());
  out += text;
  out += data;
  return out;
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointMagicError("not a checkpoint: bad magic bytes");
  }
  std::size_t pos = kCheckpointMagic.size();
  if (bytes.size() < pos + 8) {
    throw CheckpointTruncatedError("metadata", "checkpoint truncated in metadata length");
  }
  const std::uint64_t meta_len = detail::get_u64(bytes.substr(pos, 8));
  pos += 8;
  if (bytes.size() - pos < meta_len) {
    throw CheckpointTruncatedError("metadata", "checkpoint truncated in metadata");
  }
  const std::string meta(bytes.substr(pos, meta_len));
  const std::string_view data = bytes.substr(pos + meta_len);

  struct ArrayEntry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<ArrayEntry> arrays;
  std::vector<std::string> tokens;
  std::map<std::string, std::string> fields;
  std::istringstream lines(meta);
  std::string line;
  while (std::getline(lines, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("checkpoint metadata: bad line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "token") {
      tokens.push_back(value);
    } else if (key == "array") {
      std::istringstream fs(value);
      ArrayEntry e;
      std::string rows, cols, offset;
      if (!(fs >> e.name >> rows >> cols >> offset)) {
        throw CheckpointError("checkpoint metadata: bad array line '" + line + "'");
      }
      e.shape = {detail::parse_count("rows", rows), detail::parse_count("cols", cols)};
      e.offset = detail::parse_count("offset", offset);
      arrays.push_back(std::move(e));
    } else {
      fields[key] = value;
    }
  }
  auto field = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw CheckpointError("checkpoint metadata: missing " + key);
    return it->second;
  };

  const std::size_t version = detail::parse_count("version", field("version"));
  if (version != static_cast<std::size_t>(kCheckpointVersion)) {
    throw CheckpointVersionError("checkpoint version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }

  Checkpoint ckpt;
  try {
    ckpt.config.vocab_size = detail::parse_count("vocab_size", field("vocab_size"));
    ckpt.config.embed_dim = detail::parse_count("embed_dim", field("embed_dim"));
    ckpt.config.hidden_dim = detail::parse_count("hidden_dim", field("hidden_dim"));
    ckpt.config.first_word_mode = parse_first_word_mode(field("first_word_mode"));
    ckpt.config.context_mode = parse_context_mode(field("context_mode"));
    ckpt.config.readout = parse_readout(field("readout"));
    ckpt.config.validate();
    ckpt.vocab = Vocab::from_tokens(tokens);
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError(std::string("checkpoint metadata: ") + e.what());
  }
  if (ckpt.vocab.size() != ckpt.config.vocab_size) {
    throw CheckpointError("checkpoint metadata: vocab_size disagrees with token list");
  }

  const std::vector<ParamSpec> layout = param_layout(ckpt.config);
  if (layout.size() != arrays.size()) {
    throw CheckpointError("checkpoint manifest lists " + std::to_string(arrays.size()) +
                          " arrays, config implies " + std::to_string(layout.size()));
  }
  std::size_t expected_offset = 0;
  for (std::size_t k = 0; k < layout.size(); ++k) {
    const ParamSpec& spec = layout[k];
    const ArrayEntry& entry = arrays[k];
    if (entry.name != spec.name || !(entry.shape == spec.shape) ||
        entry.offset != expected_offset) {
      throw CheckpointError("checkpoint manifest entry " + entry.name +
                            " does not match the expected layout for " + spec.name);
    }
    const std::size_t bytes_needed = spec.shape.size() * 4;
    if (data.size() < entry.offset + bytes_needed) {
      throw CheckpointTruncatedError(spec.name, "checkpoint truncated in array " + spec.name);
    }
    std::vector<double> values(spec.shape.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      values[i] = detail::get_f32(data.data() + entry.offset + 4 * i);
    }
    spec.slot(ckpt.params) = Tensor(spec.shape, std::move(values));
    expected_offset += bytes_needed;
  }
  if (data.size() != expected_offset) {
    throw CheckpointError("checkpoint has " + std::to_string(data.size() - expected_offset) +
                          " trailing bytes");
  }
  return ckpt;
}

inline void save_checkpoint(const ModelParams& params, const ModelConfig& config,
                            const Vocab& vocab, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(params, config, vocab);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace lts
