#include "kgr/sequencer.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>

namespace kgr {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      flush();
    } else if (c < 0x80 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  add(kPadToken);
  add(kUnkToken);
}

Vocabulary Vocabulary::build(std::span<const std::string> corpus) {
  Vocabulary v;
  for (const auto& text : corpus)
    for (const auto& w : split_words(text)) v.add(w);
  return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken)
    throw std::invalid_argument("vocabulary must start with [PAD] and [UNK]");
  Vocabulary v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (v.index_.count(tokens[i])) throw std::invalid_argument("duplicate vocabulary token '" + tokens[i] + "'");
    v.add(tokens[i]);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens));
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

TokenId Vocabulary::add(std::string_view token) {
  auto it = index_.find(std::string(token));
  if (it != index_.end()) return it->second;
  auto id = static_cast<TokenId>(tokens_.size());
  tokens_.emplace_back(token);
  index_.emplace(tokens_.back(), id);
  return id;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw std::out_of_range("token id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::hash() const {
  std::uint64_t h = fnv1a(nullptr, 0);
  for (const auto& t : tokens_) {
    h = fnv1a(t.data(), t.size(), h);
    h = fnv1a("\n", 1, h);
  }
  return h;
}

std::vector<TokenId> Vocabulary::tokenize(std::string_view text) const {
  std::vector<TokenId> out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::vector<TokenId> node_subwords(const NodeToken& t, const KnowledgeGraph& g, const Vocabulary& vocab) {
  auto ids = vocab.tokenize(token_label(t, g));
  if (ids.empty()) ids.push_back(Vocabulary::kUnk);
  return ids;
}

InputSequence assemble_input(std::string_view question, const SerializedSubgraph& graph,
                             const KnowledgeGraph& g, const Vocabulary& vocab, const InputOptions& opts) {
  InputSequence in;
  in.question_ids = vocab.tokenize(question);
  const std::size_t nq = in.question_ids.size();
  if (nq == 0) throw std::invalid_argument("build_input: question has no tokens");
  if (graph.tokens.empty()) throw std::invalid_argument("build_input: serialized subgraph is empty");
  if (nq + 1 > opts.max_len)
    throw std::invalid_argument("build_input: question of " + std::to_string(nq) +
                                " tokens leaves no room for the topic entity (max_len " +
                                std::to_string(opts.max_len) + ")");

  in.graph = nq + graph.tokens.size() > opts.max_len ? truncate(graph, opts.max_len - nq) : graph;

  for (std::size_t i = 0; i < nq; ++i) {
    in.row_tokens.push_back({in.question_ids[i]});
    in.row_positions.push_back(static_cast<std::int32_t>(i));
    in.row_segments.push_back(Segment::Question);
  }
  for (std::size_t i = 0; i < in.graph.tokens.size(); ++i) {
    const auto& tok = in.graph.tokens[i];
    in.row_tokens.push_back(node_subwords(tok, g, vocab));
    in.row_positions.push_back(static_cast<std::int32_t>(nq + i));
    in.row_segments.push_back(Segment::Graph);
    if (tok.is_entity()) in.entity_positions.push_back(static_cast<std::uint32_t>(nq + i));
  }
  in.mask = build_mask(nq, in.graph, MaskOptions{opts.structural_mask});
  return in;
}

InputSequence pad_input(const InputSequence& in, std::size_t length) {
  if (length <= in.length()) return in;
  InputSequence out = in;
  const std::size_t extra = length - in.length();
  for (std::size_t i = 0; i < extra; ++i) {
    out.row_tokens.push_back({Vocabulary::kPad});
    out.row_positions.push_back(0);
    out.row_segments.push_back(Segment::Pad);
  }
  out.mask = pad_mask(in.mask, extra);
  return out;
}

}  // namespace kgr
