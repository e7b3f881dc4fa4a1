#pragma once
// Training loops (full adaptation and adapter-only fine-tuning), evaluation,
// and retrieve-then-reason inference.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kgr/datagen.hpp"
#include "kgr/encoder.hpp"
#include "kgr/model.hpp"
#include "kgr/retrieval.hpp"

namespace kgr {

enum class Task { Adapt, FinetuneReason, FinetuneRetrieve };

std::string to_string(Task t);
Task parse_task(std::string_view s);  // "adapt", "finetune_reason", "finetune_retrieve"

inline constexpr const char* kRetrievalAdapter = "retrieval";
inline constexpr const char* kReasoningAdapter = "reasoning";

struct TrainConfig {
  Task task = Task::Adapt;
  double lr = 1e-4;
  std::size_t batch_size = 40;
  int epochs = 10;
  std::uint64_t seed = 1;
  TrainPolicy policy = TrainPolicy::Full;
  int eval_interval = 1;
  int patience = 5;
  double weight_decay = 0.01;
  double clip_norm = 1.0;
  double tau = 0.5;

  static TrainConfig defaults(Task task);
  // Positive numeric fields; Adapt must use the full policy.
  void validate() const;
};

// Overrides fields present in a JSON object file; unknown keys are errors.
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base);

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  std::optional<double> val_hits;
  std::optional<double> val_f1;
};

struct RunReport {
  std::string task;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  double best_val_hits = 0.0;
  std::string best_checkpoint;
  ParamCounts params;
  std::size_t train_examples = 0;
  std::size_t skipped_examples = 0;  // no answer inside the subgraph
  double wall_clock_seconds = 0.0;
  bool structural_mask = true;
  bool skip_adapt = false;
  bool diverged = false;
  std::string error;
  std::uint64_t base_hash_before = 0;
  std::uint64_t base_hash_after = 0;

  std::string to_json() const;
};

struct SampleMetrics {
  std::string id;
  int hops = 0;
  bool answer_present = false;
  int hit = 0;
  F1Result f1;
  std::string prediction;
};

struct EvalReport {
  std::size_t n = 0;
  double hits_at_1 = 0.0;
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::vector<SampleMetrics> rows;

  std::string to_json(bool with_rows = true) const;
};

// Full-parameter training of the base model (no adapter active). Leaves
// `params` at the best validation Hits@1 state; with no validation examples
// the final state is kept. A non-finite loss stops training and is recorded
// in the report.
RunReport adapt_tune(ModelParameters& params, const std::vector<Example>& train, const std::vector<Example>& val,
                     const TrainConfig& cfg);

// Adapter-only training of the active adapter set. Throws std::logic_error
// when no adapter is active or the policy is not adapter-only, and when the
// base weights changed.
RunReport fine_tune(ModelParameters& params, const std::vector<Example>& train, const std::vector<Example>& val,
                    const TrainConfig& cfg);

// Corpus Hits@1 and F1; examples without an answer in their graph count as
// misses. `symbols` (optional) resolves predicted labels. Throws
// std::invalid_argument on an empty set.
EvalReport evaluate(const ModelParameters& params, const std::vector<Example>& examples, double tau,
                    const KnowledgeGraph* symbols = nullptr);

struct Dataset {
  KnowledgeGraph symbols;
  std::vector<QARecord> records;
  std::vector<QASample> samples;
};

Dataset load_dataset(const std::filesystem::path& path);
Dataset dataset_from_records(std::vector<QARecord> records);

// Reasoning examples of one split ("" for all).
std::vector<Example> reasoning_examples(const Dataset& ds, const Vocabulary& vocab, const InputOptions& opts,
                                        std::string_view split = "");

struct InferResult {
  std::string answer;
  double score = 0.0;
  std::vector<std::pair<std::string, double>> table;  // entity label, probability; best first
  Subgraph subgraph;
  bool topic_only = false;
};

// Retrieval adapter picks the subgraph, reasoning adapter scores its entities.
// Both adapter sets must exist; the active set is restored afterwards.
InferResult infer(ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab, std::string_view question,
                  const std::vector<EntityId>& topics, const RetrievalConfig& rcfg, const InputOptions& opts = {});

// Reasoning over a given subgraph with the currently active parameters.
InferResult answer_over(const ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab,
                        std::string_view question, const Subgraph& sg, const InputOptions& opts = {});

}  // namespace kgr
