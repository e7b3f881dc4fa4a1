#pragma once
// Breadth-first linearization of a question subgraph into a deduplicated
// entity/relation token sequence, plus the triple-local adjacency between
// token positions.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "kgr/kg.hpp"

namespace kgr {

struct Subgraph {
  std::vector<EntityId> topics;
  std::vector<Triple> triples;

  // Entities in first-appearance order: topics, then triple endpoints.
  std::vector<EntityId> entities() const;
  bool contains(EntityId e) const;
};

enum class NodeKind : std::uint8_t { Entity, Relation };

struct NodeToken {
  NodeKind kind = NodeKind::Entity;
  std::uint32_t id = 0;

  static NodeToken entity(EntityId e) { return {NodeKind::Entity, e.value}; }
  static NodeToken relation(RelationId r) { return {NodeKind::Relation, r.value}; }
  bool is_entity() const { return kind == NodeKind::Entity; }
  friend auto operator<=>(const NodeToken&, const NodeToken&) = default;
};

struct SerializedSubgraph {
  std::vector<NodeToken> tokens;
  // Unordered position pairs stored as (i, j) with i < j, sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> adjacency;
  std::vector<std::uint32_t> topic_positions;
  // Set when some triples were not reachable from the topics and were
  // appended after the reachable part.
  bool has_unreachable = false;

  std::size_t size() const { return tokens.size(); }
  bool adjacent(std::uint32_t i, std::uint32_t j) const;
  std::vector<std::uint32_t> entity_positions() const;
  // Position of a token, or -1.
  std::int64_t position_of(NodeToken t) const;

  friend bool operator==(const SerializedSubgraph&, const SerializedSubgraph&) = default;
};

// Throws std::invalid_argument when there are no topics.
SerializedSubgraph serialize_subgraph(const Subgraph& sg);

// Longest prefix of at most `budget` tokens; adjacency pairs touching dropped
// positions are removed. `budget` is clamped to at least 1.
SerializedSubgraph truncate(const SerializedSubgraph& s, std::size_t budget);

// `pos<TAB>kind<TAB>label` per token, then `adj<TAB>i<TAB>j` per pair.
void dump(std::ostream& os, const SerializedSubgraph& s, const KnowledgeGraph& g);
std::string dump(const SerializedSubgraph& s, const KnowledgeGraph& g);

const std::string& token_label(const NodeToken& t, const KnowledgeGraph& g);

}  // namespace kgr
