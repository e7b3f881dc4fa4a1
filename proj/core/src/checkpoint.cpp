#include "kgr/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace kgr {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "KGRCKPT1\n";
constexpr std::size_t kMagicLen = sizeof(kMagic) - 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

json config_json(const ModelConfig& c) {
  return {{"layers", c.layers},   {"d", c.d},
          {"heads", c.heads},     {"d_ff", c.d_ff},
          {"max_len", c.max_len}, {"vocab_size", c.vocab_size},
          {"adapter_width", c.adapter_width}, {"dropout", c.dropout},
          {"seed", c.seed},       {"separate_graph_positions", c.separate_graph_positions}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.layers = j.at("layers");
  c.d = j.at("d");
  c.heads = j.at("heads");
  c.d_ff = j.at("d_ff");
  c.max_len = j.at("max_len");
  c.vocab_size = j.at("vocab_size");
  c.adapter_width = j.at("adapter_width");
  c.dropout = j.at("dropout");
  c.seed = j.at("seed");
  c.separate_graph_positions = j.at("separate_graph_positions");
  return c;
}

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params, const Vocabulary& vocab) {
  if (static_cast<std::size_t>(params.config().vocab_size) != vocab.size())
    throw CheckpointError("vocabulary size does not match model config");
  json header;
  header["format"] = 1;
  header["config"] = config_json(params.config());
  header["vocab"] = vocab.tokens();
  header["vocab_hash"] = hex64(vocab.hash());
  header["adapter_sets"] = params.adapter_sets();
  header["active_adapter"] = params.active() ? json(*params.active()) : json(nullptr);
  json table = json::array();
  for (const auto& t : params.tensors())
    table.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"trainable", t.trainable}});
  header["tensors"] = std::move(table);

  std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(kMagic, kMagicLen);
  std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : params.tensors())
    out.write(reinterpret_cast<const char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
  if (!out) throw CheckpointError("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_vocab_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[kMagicLen];
  in.read(magic, kMagicLen);
  if (!in || std::string_view(magic, kMagicLen) != std::string_view(kMagic, kMagicLen))
    throw CheckpointError(path.string() + ": not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!in || len > (1ULL << 32)) throw CheckpointError(path.string() + ": corrupt header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError(path.string() + ": truncated header");

  json header = json::parse(text);
  Checkpoint ck{ModelParameters{}, Vocabulary::from_tokens(header.at("vocab").get<std::vector<std::string>>())};
  const std::string stored_hash = header.at("vocab_hash");
  if (hex64(ck.vocab.hash()) != stored_hash) throw CheckpointError(path.string() + ": vocabulary hash mismatch");
  if (expected_vocab_hash && hex64(*expected_vocab_hash) != stored_hash)
    throw CheckpointError(path.string() + ": checkpoint was trained with a different vocabulary");

  ModelConfig cfg = config_from_json(header.at("config"));
  if (static_cast<std::size_t>(cfg.vocab_size) != ck.vocab.size())
    throw CheckpointError(path.string() + ": vocabulary size does not match config");
  ck.params = ModelParameters::init(cfg);
  for (const auto& name : header.at("adapter_sets")) ck.params.add_adapter_set(name.get<std::string>());

  const auto& table = header.at("tensors");
  if (table.size() != ck.params.tensors().size())
    throw CheckpointError(path.string() + ": tensor count does not match config");
  for (std::size_t i = 0; i < table.size(); ++i) {
    auto& t = ck.params.tensors()[i];
    const auto& entry = table[i];
    if (entry.at("name").get<std::string>() != t.name || entry.at("rows").get<Eigen::Index>() != t.value.rows() ||
        entry.at("cols").get<Eigen::Index>() != t.value.cols())
      throw CheckpointError(path.string() + ": tensor " + entry.at("name").get<std::string>() + " has an unexpected shape");
    t.trainable = entry.at("trainable");
    in.read(reinterpret_cast<char*>(t.value.data()), static_cast<std::streamsize>(t.value.size() * sizeof(double)));
    if (!in) throw CheckpointError(path.string() + ": truncated tensor data");
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError(path.string() + ": trailing bytes");
  if (!header.at("active_adapter").is_null()) ck.params.activate(header.at("active_adapter").get<std::string>());
  return ck;
}

std::uint64_t file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = fnv1a(nullptr, 0);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<std::size_t>(in.gcount()), h);
  }
  return h;
}

}  // namespace kgr
