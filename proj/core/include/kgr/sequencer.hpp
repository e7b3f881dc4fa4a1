#pragma once
// Word-level vocabulary and assembly of the encoder input: question tokens
// followed by the serialized subgraph, with the attention mask attached.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "kgr/attn_mask.hpp"
#include "kgr/kg.hpp"
#include "kgr/serializer.hpp"
#include "kgr/tensor.hpp"

namespace kgr {

using TokenId = std::int32_t;

// Lowercased split on whitespace; every ASCII punctuation character is its own
// token. Bytes >= 0x80 are treated as word characters.
std::vector<std::string> split_words(std::string_view text);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kPadToken = "[PAD]";
  static constexpr std::string_view kUnkToken = "[UNK]";

  Vocabulary();
  // Every word of every text, in first-appearance order.
  static Vocabulary build(std::span<const std::string> corpus);
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  TokenId add(std::string_view token);
  TokenId id(std::string_view token) const;  // kUnk when absent
  const std::string& token(TokenId id) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  std::uint64_t hash() const;

  std::vector<TokenId> tokenize(std::string_view text) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

enum class Segment : std::uint8_t { Question, Graph, Pad };

struct InputSequence {
  std::vector<TokenId> question_ids;
  SerializedSubgraph graph;  // after truncation
  // Vocabulary ids summed into each row's embedding.
  std::vector<std::vector<TokenId>> row_tokens;
  std::vector<std::int32_t> row_positions;
  std::vector<Segment> row_segments;
  // Absolute positions of entity tokens, ascending.
  std::vector<std::uint32_t> entity_positions;
  AttentionMask mask;

  std::size_t question_length() const { return question_ids.size(); }
  std::size_t length() const { return row_tokens.size(); }
};

struct InputOptions {
  std::size_t max_len = 512;
  bool structural_mask = true;
};

// Token ids for a node's surface label; an empty label maps to [UNK].
std::vector<TokenId> node_subwords(const NodeToken& t, const KnowledgeGraph& g, const Vocabulary& vocab);

// Assembles rows, positions and mask. Throws std::invalid_argument when the
// question has no tokens or the topic entity does not fit in max_len.
InputSequence assemble_input(std::string_view question, const SerializedSubgraph& graph,
                             const KnowledgeGraph& g, const Vocabulary& vocab, const InputOptions& opts);

// Appends PAD rows up to `length`. Padding rows are masked out in both
// directions and never counted as entities.
InputSequence pad_input(const InputSequence& in, std::size_t length);

}  // namespace kgr
