#pragma once
// Glue between prepared inputs and the encoder + scoring head: per-example
// loss/gradient and prediction.

#include <optional>
#include <string>
#include <vector>

#include "kgr/datagen.hpp"
#include "kgr/encoder.hpp"
#include "kgr/head.hpp"
#include "kgr/sequencer.hpp"

namespace kgr {

struct Example {
  std::string id;
  InputSequence input;
  // Positions the head scores: entity tokens for answer reasoning, candidate
  // relation tokens for retrieval.
  std::vector<std::uint32_t> positions;
  std::optional<TargetDistribution> target;  // nullopt when no answer is present
  std::vector<std::uint32_t> answer_positions;
  std::size_t gold_count = 0;
  int hops = 0;
};

// Serializes the subgraph, assembles the input and the uniform answer target.
Example make_reasoning_example(const QASample& s, const KnowledgeGraph& symbols, const Vocabulary& vocab,
                               const InputOptions& opts);

// Forward, KL loss against example.target, backward into `grads`.
// Throws std::invalid_argument if the example has no target.
double accumulate_example(const ModelParameters& params, const Example& ex, GradientSet& grads, Mode mode, Rng* rng);

// Loss without gradients (eval mode).
double example_loss(const ModelParameters& params, const Example& ex);

AnswerScores predict(const ModelParameters& params, const Example& ex);

// Vocabulary over questions and every label in the records' subgraphs.
Vocabulary build_vocabulary(const std::vector<QARecord>& records);

}  // namespace kgr
