#pragma once
// Synthetic multi-hop QA construction: random-walk reasoning paths over the
// graph, subgraphs that always contain the path, templated questions, and
// the JSON-lines record format shared by every stage.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kgr/kg.hpp"
#include "kgr/serializer.hpp"
#include "kgr/tensor.hpp"

namespace kgr {

struct PathStep {
  RelationId relation;
  EntityId entity;
  bool inverse = false;  // walked tail -> head
};

struct ReasoningPath {
  EntityId start;
  std::vector<PathStep> steps;
  int requested_hops = 0;
  // The walk hit a dead end before requested_hops.
  bool shortened = false;

  int hops() const { return static_cast<int>(steps.size()); }
  EntityId answer() const { return steps.empty() ? start : steps.back().entity; }
  std::vector<Triple> triples() const;
  std::vector<EntityId> entities() const;
};

struct QuestionTemplate {
  int hops = 1;
  std::string pattern;  // placeholders {e0}, {r1} .. {r4}

  // Throws std::invalid_argument if {e0} is missing or the relation
  // placeholders are not exactly {r1}..{r<hops>}.
  void validate() const;
};

std::vector<QuestionTemplate> default_templates();

struct QASample {
  std::string id;
  std::string question;
  std::vector<EntityId> topics;
  Subgraph subgraph;
  std::vector<EntityId> answers;
  ReasoningPath path;
  std::string split = "train";
};

// Walks h ~ U[min_hops, max_hops] steps from `topic`, choosing uniformly among
// incident triples whose far endpoint is not already on the path. Throws
// std::invalid_argument for bad hop bounds or a topic without a walkable
// triple.
ReasoningPath sample_path(const KnowledgeGraph& g, EntityId topic, int max_hops, Rng& rng);
ReasoningPath sample_path(const KnowledgeGraph& g, EntityId topic, int min_hops, int max_hops, Rng& rng);

// Every entity reached from the start by following the path's relation
// sequence in either direction, excluding the start itself. Always contains
// path.answer().
std::vector<EntityId> path_answers(const KnowledgeGraph& g, const ReasoningPath& path);

// Path triples plus randomized breadth-first expansion from the path entities
// until `entity_budget` entities are included. Triple order is shuffled.
// Throws std::invalid_argument when the budget is below the path's entity count.
Subgraph extract_subgraph(const KnowledgeGraph& g, const ReasoningPath& path, std::size_t entity_budget, Rng& rng);

// Throws std::invalid_argument when no template matches the hop count.
std::string synthesize_question(const KnowledgeGraph& g, const ReasoningPath& path,
                                const std::vector<QuestionTemplate>& templates, Rng& rng);

struct DatagenConfig {
  int min_hops = 1;
  int max_hops = 4;
  std::size_t entity_budget = 12;
  double validation_fraction = 0.05;
  // Fraction of highest-degree entities used as topics when no pool is given.
  double topic_quantile = 0.5;
  std::uint64_t seed = 7;
  std::vector<QuestionTemplate> templates = default_templates();
};

// Top `quantile` of entities by degree (ties by id), isolated ones excluded.
std::vector<EntityId> popular_topics(const KnowledgeGraph& g, double quantile);

struct DatagenStats {
  std::size_t generated = 0;
  std::size_t skipped_topics = 0;
  std::size_t validation = 0;
};

// n_samples samples; sample i is drawn from a generator seeded by (seed, i),
// and the last round(n * validation_fraction) are marked "validation".
// Throws std::invalid_argument when every topic in the pool is isolated.
std::vector<QASample> generate_samples(const KnowledgeGraph& g, std::size_t n_samples,
                                       const std::vector<EntityId>& topic_pool, const DatagenConfig& cfg,
                                       DatagenStats* stats = nullptr);

struct QARecord;

// generate_samples + to_record, written as JSON lines to `out`.
std::vector<QARecord> generate_dataset(const KnowledgeGraph& g, std::size_t n_samples,
                                       const std::vector<EntityId>& topic_pool, const DatagenConfig& cfg,
                                       const std::filesystem::path& out, DatagenStats* stats = nullptr);

// ---- JSON-lines records ----------------------------------------------------

struct LabelTriple {
  std::string head, relation, tail;
  friend bool operator==(const LabelTriple&, const LabelTriple&) = default;
};

struct QARecord {
  std::string id;
  std::string question;
  std::vector<std::string> topics;
  std::vector<LabelTriple> triples;
  std::vector<std::string> answers;
  std::vector<std::string> path;  // e0, r1, e1, ..., inverse steps prefixed "^"
  int hops = 0;
  std::string split = "train";
  friend bool operator==(const QARecord&, const QARecord&) = default;
};

QARecord to_record(const QASample& s, const KnowledgeGraph& g);
// Interns every label of the record into `symbols`.
QASample from_record(const QARecord& r, KnowledgeGraph& symbols);

std::string to_json_line(const QARecord& r);
QARecord parse_json_line(const std::string& line);
void write_records(const std::filesystem::path& path, const std::vector<QARecord>& records);
void write_records(std::ostream& os, const std::vector<QARecord>& records);
std::vector<QARecord> read_records(const std::filesystem::path& path);

// Replaces questions from a `sample-id<TAB>question` file (external generator
// hook). Returns the number of records changed.
std::size_t apply_question_overrides(std::vector<QARecord>& records, const std::filesystem::path& path);

// Checks a record against the sample invariants; returns the problems found.
std::vector<std::string> validate_record(const QARecord& r);

// ---- synthetic graphs ------------------------------------------------------

struct SyntheticGraphConfig {
  std::size_t entities = 240;
  std::size_t relations = 15;
  std::size_t triples_per_entity = 3;
  std::uint64_t seed = 11;
};

// Random directed multigraph: each entity gets `triples_per_entity` outgoing
// triples with a uniformly drawn relation and tail. Entity labels are
// "e<n>"; relation labels are short English phrases.
KnowledgeGraph synthetic_graph(const SyntheticGraphConfig& cfg);

}  // namespace kgr
