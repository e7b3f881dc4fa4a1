#include "kgr/head.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace kgr {

std::size_t AnswerScores::argmax() const {
  if (probs.empty()) throw std::logic_error("argmax of empty scores");
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i) {
    // Break ties by position, not by list order.
    if (probs[i] > probs[best] || (probs[i] == probs[best] && positions[i] < positions[best])) best = i;
  }
  return best;
}

AnswerScores scores_from_logits(std::vector<std::uint32_t> positions, std::vector<double> logits) {
  if (positions.empty()) throw std::invalid_argument("score_entities: no entity positions");
  if (positions.size() != logits.size()) throw std::invalid_argument("score_entities: size mismatch");
  AnswerScores s;
  s.positions = std::move(positions);
  s.logits = std::move(logits);
  double mx = *std::max_element(s.logits.begin(), s.logits.end());
  double sum = 0.0;
  s.probs.resize(s.logits.size());
  for (std::size_t i = 0; i < s.logits.size(); ++i) sum += s.probs[i] = std::exp(s.logits[i] - mx);
  for (auto& p : s.probs) p /= sum;
  return s;
}

AnswerScores score_entities(const Mat& hidden, std::span<const std::uint32_t> positions, const Mat& w, double b) {
  if (positions.empty()) throw std::invalid_argument("score_entities: no entity positions");
  if (w.rows() != hidden.cols() || w.cols() != 1) throw std::invalid_argument("score_entities: head weight shape");
  std::vector<double> logits;
  logits.reserve(positions.size());
  for (auto p : positions) {
    if (p >= hidden.rows()) throw std::out_of_range("score_entities: position outside sequence");
    logits.push_back(hidden.row(p).dot(w.col(0)) + b);
  }
  return scores_from_logits({positions.begin(), positions.end()}, std::move(logits));
}

std::optional<TargetDistribution> build_target(std::span<const EntityId> answers, const SerializedSubgraph& graph,
                                               std::size_t question_length) {
  std::set<std::uint32_t> present;
  for (auto a : answers) {
    auto pos = graph.position_of(NodeToken::entity(a));
    if (pos >= 0) present.insert(static_cast<std::uint32_t>(pos + static_cast<std::int64_t>(question_length)));
  }
  if (present.empty()) return std::nullopt;
  TargetDistribution t;
  for (std::uint32_t i = 0; i < graph.tokens.size(); ++i) {
    if (!graph.tokens[i].is_entity()) continue;
    auto abs = static_cast<std::uint32_t>(i + question_length);
    t.positions.push_back(abs);
    t.probs.push_back(present.count(abs) ? 1.0 / static_cast<double>(present.size()) : 0.0);
  }
  // last answer takes the remainder so the left-to-right sum is exactly 1
  // (the partial sum is >= 1/2, so 1 - partial is exact)
  double partial = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < t.probs.size(); ++i)
    if (t.probs[i] > 0.0) last = i;
  for (std::size_t i = 0; i < last; ++i) partial += t.probs[i];
  t.probs[last] = 1.0 - partial;
  return t;
}

namespace {

void check_distributions(const TargetDistribution& t, const AnswerScores& p) {
  if (t.positions != p.positions) throw std::invalid_argument("kl_loss: target and prediction cover different positions");
  auto check = [](std::span<const double> v, const char* what) {
    double sum = 0.0;
    for (double x : v) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw std::invalid_argument(std::string("kl_loss: ") + what + " has invalid entries");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw std::invalid_argument(std::string("kl_loss: ") + what + " does not sum to 1");
  };
  check(t.probs, "target");
  check(p.probs, "prediction");
}

}  // namespace

double kl_loss(const TargetDistribution& target, const AnswerScores& predicted) {
  check_distributions(target, predicted);
  double loss = 0.0;
  for (std::size_t i = 0; i < target.probs.size(); ++i) {
    double t = target.probs[i];
    if (t == 0.0) continue;
    loss += t * std::log(t / std::max(predicted.probs[i], kProbFloor));
  }
  return loss;
}

std::vector<double> kl_loss_grad_logits(const TargetDistribution& target, const AnswerScores& predicted) {
  check_distributions(target, predicted);
  // d/dz of -sum t log softmax(z) with sum t = 1.
  std::vector<double> g(target.probs.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = predicted.probs[i] - target.probs[i];
  return g;
}

Mat head_backward(const Mat& hidden, const AnswerScores& scores, std::span<const double> d_logits, const Mat& w,
                  Mat* dw, Mat* db) {
  Mat dh = Mat::Zero(hidden.rows(), hidden.cols());
  for (std::size_t i = 0; i < scores.positions.size(); ++i) {
    auto p = scores.positions[i];
    dh.row(p) += d_logits[i] * w.col(0).transpose();
    if (dw) dw->col(0) += d_logits[i] * hidden.row(p).transpose();
    if (db) (*db)(0, 0) += d_logits[i];
  }
  return dh;
}

int hits_at_1(const AnswerScores& scores, std::span<const std::uint32_t> answer_positions) {
  auto top = scores.positions[scores.argmax()];
  return std::find(answer_positions.begin(), answer_positions.end(), top) != answer_positions.end() ? 1 : 0;
}

F1Result f1_from_sets(std::size_t predicted, std::size_t correct, std::size_t gold) {
  F1Result r;
  r.precision = predicted ? static_cast<double>(correct) / static_cast<double>(predicted) : 0.0;
  r.recall = gold ? static_cast<double>(correct) / static_cast<double>(gold) : 0.0;
  r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

F1Result f1_score(const AnswerScores& scores, std::span<const std::uint32_t> answer_positions, std::size_t gold_total,
                  double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("f1: tau must be in (0, 1]");
  double mx = *std::max_element(scores.probs.begin(), scores.probs.end());
  std::size_t predicted = 0, correct = 0;
  for (std::size_t i = 0; i < scores.probs.size(); ++i) {
    if (scores.probs[i] < tau * mx) continue;
    ++predicted;
    if (std::find(answer_positions.begin(), answer_positions.end(), scores.positions[i]) != answer_positions.end())
      ++correct;
  }
  return f1_from_sets(predicted, correct, std::max(gold_total, answer_positions.size()));
}

}  // namespace kgr
