#pragma once
// Question-relation scoring with the shared encoder and iterative top-k
// relation expansion from the topic entities.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kgr/datagen.hpp"
#include "kgr/encoder.hpp"
#include "kgr/model.hpp"

namespace kgr {

struct RelationScore {
  RelationId relation;
  double score = 0.0;
};

struct RetrievalConfig {
  std::size_t k = 3;
  int max_hops = 3;
  std::size_t entity_cap = 100;

  void validate() const;
};

struct HopRelations {
  std::vector<RelationId> positives;
  std::vector<RelationId> negatives;
};

struct RelationPairs {
  std::string id;
  std::string question;
  std::vector<HopRelations> hops;
};

struct MiningStats {
  std::size_t mined = 0;
  std::size_t disconnected = 0;
};

// Per-hop positives are the relations on shortest paths (ignoring direction)
// from the topics to the nearest answers in `g`; negatives are up to
// `max_negatives` relations incident to that hop's on-path frontier that are
// positive at no hop, drawn uniformly. Samples with no topic-answer path are
// skipped.
std::vector<RelationPairs> mine_training_pairs(const KnowledgeGraph& g, const std::vector<QASample>& samples,
                                               std::size_t max_negatives, std::uint64_t seed,
                                               MiningStats* stats = nullptr);

// Question followed by the candidates (sorted by id) as isolated relation
// tokens. Every candidate row uses the position right after the question, so
// a candidate's encoding depends only on the question and its own label.
InputSequence relation_input(std::string_view question, std::vector<RelationId> candidates, const KnowledgeGraph& g,
                             const Vocabulary& vocab, const InputOptions& opts);

// One training example per mined hop.
std::vector<Example> make_retrieval_examples(const std::vector<RelationPairs>& pairs, const KnowledgeGraph& g,
                                             const Vocabulary& vocab, const InputOptions& opts);

// Head logit per candidate, in the caller's order. Empty candidates give an
// empty result.
std::vector<RelationScore> score_relations(const ModelParameters& params, const KnowledgeGraph& g,
                                           const Vocabulary& vocab, std::string_view question,
                                           const std::vector<RelationId>& candidates, const InputOptions& opts = {});

using RelationScorer = std::function<std::vector<RelationScore>(const std::vector<RelationId>&)>;

RelationScorer model_scorer(const ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab,
                            std::string question, InputOptions opts = {});

// Frontier expansion: at hop h, score the distinct relations incident to the
// graph ball of radius h-1 around the topics, keep the top k (ties by relation
// id), add every frontier triple carrying a kept relation (graph order), and
// move the frontier to the newly reached entities. Triples that would push the
// entity count past entity_cap are skipped.
Subgraph retrieve_subgraph(const KnowledgeGraph& g, const std::vector<EntityId>& topics, const RelationScorer& scorer,
                           const RetrievalConfig& cfg);

Subgraph retrieve_subgraph(const ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab,
                           std::string_view question, const std::vector<EntityId>& topics,
                           const RetrievalConfig& cfg, const InputOptions& opts = {});

// Fraction of samples with at least one answer inside the retrieved subgraph.
double answer_recall(const std::vector<QASample>& samples, const std::vector<Subgraph>& retrieved);

}  // namespace kgr
