#include "kgr/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace kgr {

Example make_reasoning_example(const QASample& s, const KnowledgeGraph& symbols, const Vocabulary& vocab,
                               const InputOptions& opts) {
  Subgraph sg = s.subgraph;
  if (sg.topics.empty()) sg.topics = s.topics;
  auto serialized = serialize_subgraph(sg);

  Example ex;
  ex.id = s.id;
  ex.hops = s.path.hops();
  ex.input = assemble_input(s.question, serialized, symbols, vocab, opts);
  ex.positions = ex.input.entity_positions;
  ex.gold_count = s.answers.size();
  ex.target = build_target(s.answers, ex.input.graph, ex.input.question_length());
  if (ex.target)
    for (std::size_t i = 0; i < ex.target->positions.size(); ++i)
      if (ex.target->probs[i] > 0.0) ex.answer_positions.push_back(ex.target->positions[i]);
  return ex;
}

namespace {

AnswerScores head_scores(const ModelParameters& params, const Mat& hidden, const Example& ex) {
  const auto& t = params.tensors();
  return score_entities(hidden, ex.positions, t[params.head_w()].value, t[params.head_b()].value(0, 0));
}

}  // namespace

double accumulate_example(const ModelParameters& params, const Example& ex, GradientSet& grads, Mode mode, Rng* rng) {
  if (!ex.target) throw std::invalid_argument("example " + ex.id + " has no answer in its subgraph");
  EncoderPass pass(params);
  const Mat& hidden = pass.forward(ex.input, mode, rng);
  auto scores = head_scores(params, hidden, ex);
  double loss = kl_loss(*ex.target, scores);
  auto dlogits = kl_loss_grad_logits(*ex.target, scores);
  const auto hw = params.head_w(), hb = params.head_b();
  Mat dh = head_backward(hidden, scores, dlogits, params.tensors()[hw].value, grads.has(hw) ? &grads[hw] : nullptr,
                         grads.has(hb) ? &grads[hb] : nullptr);
  pass.backward(dh, grads);
  return loss;
}

double example_loss(const ModelParameters& params, const Example& ex) {
  if (!ex.target) throw std::invalid_argument("example " + ex.id + " has no answer in its subgraph");
  return kl_loss(*ex.target, predict(params, ex));
}

AnswerScores predict(const ModelParameters& params, const Example& ex) {
  EncoderPass pass(params);
  const Mat& hidden = pass.forward(ex.input, Mode::Eval);
  return head_scores(params, hidden, ex);
}

Vocabulary build_vocabulary(const std::vector<QARecord>& records) {
  std::vector<std::string> corpus;
  for (const auto& r : records) {
    corpus.push_back(r.question);
    for (const auto& t : r.topics) corpus.push_back(t);
    for (const auto& t : r.triples) {
      corpus.push_back(t.head);
      corpus.push_back(t.relation);
      corpus.push_back(t.tail);
    }
  }
  return Vocabulary::build(corpus);
}

}  // namespace kgr
