#pragma once
// Triple store with interned entity/relation labels and a per-entity
// incidence index covering both edge directions.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kgr {

struct EntityId {
  std::uint32_t value = 0;
  friend auto operator<=>(const EntityId&, const EntityId&) = default;
};

struct RelationId {
  std::uint32_t value = 0;
  friend auto operator<=>(const RelationId&, const RelationId&) = default;
};

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  friend auto operator<=>(const Triple&, const Triple&) = default;

  bool touches(EntityId e) const { return head == e || tail == e; }
  // The endpoint opposite to `e`; for self-loops this is `e` itself.
  EntityId other(EntityId e) const { return head == e ? tail : head; }
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Bidirectional label <-> dense id table. Ids are assigned in insertion order.
class SymbolTable {
 public:
  std::uint32_t intern(std::string_view label);
  std::optional<std::uint32_t> find(std::string_view label) const;
  const std::string& label(std::uint32_t id) const;
  std::size_t size() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

 private:
  std::vector<std::string> labels_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  // Interns labels and appends the triple unless an identical one exists.
  // Returns true when the triple was new.
  bool add(std::string_view head, std::string_view relation, std::string_view tail);
  bool add(Triple t);
  EntityId add_entity(std::string_view label);
  RelationId add_relation(std::string_view label);

  std::size_t num_entities() const { return entities_.size(); }
  std::size_t num_relations() const { return relations_.size(); }
  std::size_t num_triples() const { return triples_.size(); }
  const std::vector<Triple>& triples() const { return triples_; }

  const std::string& entity_label(EntityId e) const { return entities_.label(e.value); }
  const std::string& relation_label(RelationId r) const { return relations_.label(r.value); }
  std::optional<EntityId> find_entity(std::string_view label) const;
  std::optional<RelationId> find_relation(std::string_view label) const;
  EntityId entity(std::string_view label) const;  // throws std::out_of_range
  RelationId relation(std::string_view label) const;
  const std::vector<std::string>& entity_labels() const { return entities_.labels(); }
  const std::vector<std::string>& relation_labels() const { return relations_.labels(); }

  // Triples with `e` as head or tail, in triple-list order. A self-loop is
  // listed once.
  std::vector<Triple> neighborhood(EntityId e) const;
  // Indices into triples() for the same set.
  std::span<const std::uint32_t> incident(EntityId e) const;
  // Distinct relations on incident triples, ascending by id.
  std::vector<RelationId> outgoing_relations(EntityId e) const;
  std::size_t degree(EntityId e) const { return incident(e).size(); }

  bool contains(const Triple& t) const;
  bool valid(EntityId e) const { return e.value < entities_.size(); }
  bool valid(RelationId r) const { return r.value < relations_.size(); }

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b);

 private:
  void check(EntityId e) const;

  SymbolTable entities_;
  SymbolTable relations_;
  std::vector<Triple> triples_;
  std::vector<std::vector<std::uint32_t>> incidence_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> dedup_;
};

// Reads `head<TAB>relation<TAB>tail` lines. If `entities.txt` / `relations.txt`
// sit next to the file they pin the id order before the triples are interned.
KnowledgeGraph load_graph(const std::filesystem::path& path);
// Same, from an in-memory buffer; `source` is used in error messages.
KnowledgeGraph parse_graph(std::string_view text, std::string_view source = "<memory>");
void save_graph(const KnowledgeGraph& g, const std::filesystem::path& path,
                bool write_symbol_files = true);

}  // namespace kgr
