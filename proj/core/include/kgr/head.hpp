#pragma once
// Answer scoring over entity positions, the KL training objective, and the
// Hits@1 / F1 metrics.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kgr/serializer.hpp"
#include "kgr/tensor.hpp"

namespace kgr {

struct AnswerScores {
  std::vector<std::uint32_t> positions;  // absolute sequence positions
  std::vector<double> logits;
  std::vector<double> probs;  // softmax over `positions` only

  std::size_t argmax() const;  // lowest index among ties
};

struct TargetDistribution {
  std::vector<std::uint32_t> positions;
  std::vector<double> probs;
};

// logit_i = H[pos_i] . w + b, softmax over the listed positions.
// Throws std::invalid_argument when `positions` is empty.
AnswerScores score_entities(const Mat& hidden, std::span<const std::uint32_t> positions, const Mat& w, double b);
AnswerScores scores_from_logits(std::vector<std::uint32_t> positions, std::vector<double> logits);

// Uniform mass over answer entities present in `graph`; positions are offset
// by the question length. nullopt when no answer is present.
std::optional<TargetDistribution> build_target(std::span<const EntityId> answers, const SerializedSubgraph& graph,
                                               std::size_t question_length);

inline constexpr double kProbFloor = 1e-12;

// D(target || predicted) = sum t ln(t / max(p, floor)), with 0 ln 0 = 0.
// Both must be distributions over the same positions.
double kl_loss(const TargetDistribution& target, const AnswerScores& predicted);
// dLoss / dlogit for the softmax head.
std::vector<double> kl_loss_grad_logits(const TargetDistribution& target, const AnswerScores& predicted);

// Accumulates head gradients and returns dL/dH (same shape as `hidden`).
Mat head_backward(const Mat& hidden, const AnswerScores& scores, std::span<const double> d_logits, const Mat& w,
                  Mat* dw, Mat* db);

int hits_at_1(const AnswerScores& scores, std::span<const std::uint32_t> answer_positions);

struct F1Result {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Predicted set = positions with prob >= tau * max prob. `gold_total` is the
// size of the gold answer set, which may exceed the answers present.
F1Result f1_score(const AnswerScores& scores, std::span<const std::uint32_t> answer_positions, std::size_t gold_total,
                  double tau);
F1Result f1_from_sets(std::size_t predicted, std::size_t correct, std::size_t gold);

}  // namespace kgr
