#include "kgr/retrieval.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>

namespace kgr {

void RetrievalConfig::validate() const {
  if (k < 1) throw std::invalid_argument("retrieval: k must be >= 1");
  if (max_hops < 1) throw std::invalid_argument("retrieval: max_hops must be >= 1");
  if (entity_cap < 1) throw std::invalid_argument("retrieval: entity_cap must be >= 1");
}

std::vector<RelationPairs> mine_training_pairs(const KnowledgeGraph& g, const std::vector<QASample>& samples,
                                               std::size_t max_negatives, std::uint64_t seed, MiningStats* stats) {
  MiningStats local;
  std::vector<RelationPairs> out;
  const auto& triples = g.triples();
  for (std::size_t si = 0; si < samples.size(); ++si) {
    const auto& s = samples[si];
    Rng rng(derive_seed(seed, si));

    std::map<EntityId, int> dist;
    std::vector<EntityId> layer;
    for (auto t : s.topics)
      if (g.valid(t) && dist.emplace(t, 0).second) layer.push_back(t);
    std::set<EntityId> answers(s.answers.begin(), s.answers.end());
    int found = -1;
    for (int d = 0; !layer.empty(); ++d) {
      for (auto e : layer)
        if (answers.count(e) && !std::count(s.topics.begin(), s.topics.end(), e)) found = d;
      if (found >= 0) break;
      std::vector<EntityId> next;
      for (auto e : layer)
        for (auto idx : g.incident(e)) {
          auto o = triples[idx].other(e);
          if (dist.emplace(o, d + 1).second) next.push_back(o);
        }
      layer = std::move(next);
    }
    if (found <= 0) {
      ++local.disconnected;
      continue;
    }

    // Walk back from the nearest answers along distance-decreasing edges.
    std::vector<std::set<RelationId>> positives(static_cast<std::size_t>(found));
    std::vector<std::set<EntityId>> on_path(static_cast<std::size_t>(found) + 1);
    for (auto a : answers)
      if (dist.count(a) && dist[a] == found) on_path[static_cast<std::size_t>(found)].insert(a);
    for (int h = found; h >= 1; --h) {
      for (auto v : on_path[static_cast<std::size_t>(h)])
        for (auto idx : g.incident(v)) {
          auto u = triples[idx].other(v);
          auto it = dist.find(u);
          if (it == dist.end() || it->second != h - 1) continue;
          positives[static_cast<std::size_t>(h - 1)].insert(triples[idx].relation);
          on_path[static_cast<std::size_t>(h - 1)].insert(u);
        }
    }

    // The scorer never sees the hop index, so a relation positive at any hop
    // is kept out of every hop's negatives.
    std::set<RelationId> any_positive;
    for (const auto& pos : positives) any_positive.insert(pos.begin(), pos.end());

    RelationPairs pairs;
    pairs.id = s.id;
    pairs.question = s.question;
    for (int h = 0; h < found; ++h) {
      HopRelations hop;
      const auto& pos = positives[static_cast<std::size_t>(h)];
      hop.positives.assign(pos.begin(), pos.end());
      std::set<RelationId> frontier_rels;
      for (auto e : on_path[static_cast<std::size_t>(h)])
        for (auto idx : g.incident(e))
          if (!any_positive.count(triples[idx].relation)) frontier_rels.insert(triples[idx].relation);
      std::vector<RelationId> neg(frontier_rels.begin(), frontier_rels.end());
      std::shuffle(neg.begin(), neg.end(), rng);
      if (neg.size() > max_negatives) neg.resize(max_negatives);
      std::sort(neg.begin(), neg.end());
      hop.negatives = std::move(neg);
      pairs.hops.push_back(std::move(hop));
    }
    out.push_back(std::move(pairs));
    ++local.mined;
  }
  if (stats) *stats = local;
  return out;
}

InputSequence relation_input(std::string_view question, std::vector<RelationId> candidates, const KnowledgeGraph& g,
                             const Vocabulary& vocab, const InputOptions& opts) {
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  SerializedSubgraph graph;
  for (auto r : candidates) graph.tokens.push_back(NodeToken::relation(r));
  InputOptions o = opts;
  o.max_len = std::max<std::size_t>(opts.max_len, vocab.tokenize(question).size() + candidates.size());
  InputSequence in = assemble_input(question, graph, g, vocab, o);
  const auto nq = static_cast<std::int32_t>(in.question_length());
  for (std::size_t r = in.question_length(); r < in.length(); ++r) in.row_positions[r] = nq;
  return in;
}

std::vector<Example> make_retrieval_examples(const std::vector<RelationPairs>& pairs, const KnowledgeGraph& g,
                                             const Vocabulary& vocab, const InputOptions& opts) {
  std::vector<Example> out;
  for (const auto& p : pairs) {
    for (std::size_t h = 0; h < p.hops.size(); ++h) {
      const auto& hop = p.hops[h];
      if (hop.positives.empty()) continue;
      std::vector<RelationId> cands = hop.positives;
      cands.insert(cands.end(), hop.negatives.begin(), hop.negatives.end());
      Example ex;
      ex.id = p.id + "/hop" + std::to_string(h + 1);
      ex.hops = static_cast<int>(h + 1);
      ex.input = relation_input(p.question, cands, g, vocab, opts);
      const auto nq = ex.input.question_length();
      TargetDistribution t;
      for (std::size_t i = 0; i < ex.input.graph.tokens.size(); ++i) {
        auto pos = static_cast<std::uint32_t>(nq + i);
        RelationId r{ex.input.graph.tokens[i].id};
        bool positive = std::binary_search(hop.positives.begin(), hop.positives.end(), r);
        ex.positions.push_back(pos);
        t.positions.push_back(pos);
        t.probs.push_back(positive ? 1.0 / static_cast<double>(hop.positives.size()) : 0.0);
        if (positive) ex.answer_positions.push_back(pos);
      }
      ex.gold_count = hop.positives.size();
      ex.target = std::move(t);
      out.push_back(std::move(ex));
    }
  }
  return out;
}

std::vector<RelationScore> score_relations(const ModelParameters& params, const KnowledgeGraph& g,
                                           const Vocabulary& vocab, std::string_view question,
                                           const std::vector<RelationId>& candidates, const InputOptions& opts) {
  if (candidates.empty()) return {};
  InputSequence in = relation_input(question, candidates, g, vocab, opts);
  EncoderPass pass(params);
  const Mat& hidden = pass.forward(in, Mode::Eval);
  const auto& w = params.tensors()[params.head_w()].value;
  const double b = params.tensors()[params.head_b()].value(0, 0);

  std::map<RelationId, double> by_relation;
  for (std::size_t i = 0; i < in.graph.tokens.size(); ++i) {
    auto row = static_cast<Eigen::Index>(in.question_length() + i);
    by_relation[RelationId{in.graph.tokens[i].id}] = hidden.row(row).dot(w.col(0)) + b;
  }
  std::vector<RelationScore> out;
  for (auto r : candidates) out.push_back({r, by_relation.at(r)});
  return out;
}

RelationScorer model_scorer(const ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab,
                            std::string question, InputOptions opts) {
  return [&params, &g, &vocab, question = std::move(question), opts](const std::vector<RelationId>& cands) {
    return score_relations(params, g, vocab, question, cands, opts);
  };
}

Subgraph retrieve_subgraph(const KnowledgeGraph& g, const std::vector<EntityId>& topics, const RelationScorer& scorer,
                           const RetrievalConfig& cfg) {
  cfg.validate();
  Subgraph sg;
  std::set<EntityId> included;
  std::vector<EntityId> frontier;
  for (auto t : topics) {
    if (!g.valid(t)) throw std::out_of_range("retrieve_subgraph: unknown topic");
    if (included.insert(t).second) {
      sg.topics.push_back(t);
      frontier.push_back(t);
    }
  }
  // Candidates at each hop come from the graph ball around the topics, not the
  // retrieved frontier: the candidate set then does not depend on k, so the
  // kept relations (and the retrieved triples) only grow with k.
  std::set<EntityId> ball(included);
  std::vector<EntityId> shell = frontier;
  std::set<RelationId> rel_set;
  std::set<std::uint32_t> taken;
  for (int hop = 0; hop < cfg.max_hops && !frontier.empty() && included.size() < cfg.entity_cap; ++hop) {
    std::vector<EntityId> next_shell;
    for (auto e : shell)
      for (auto idx : g.incident(e)) {
        const auto& t = g.triples()[idx];
        rel_set.insert(t.relation);
        auto o = t.other(e);
        if (ball.insert(o).second) next_shell.push_back(o);
      }
    shell = std::move(next_shell);
    std::vector<RelationId> candidates(rel_set.begin(), rel_set.end());
    if (candidates.empty()) break;
    auto scores = scorer(candidates);
    std::sort(scores.begin(), scores.end(), [](const RelationScore& a, const RelationScore& b) {
      return a.score != b.score ? a.score > b.score : a.relation < b.relation;
    });
    if (scores.size() > cfg.k) scores.resize(cfg.k);
    std::set<RelationId> keep;
    for (const auto& s : scores) keep.insert(s.relation);

    std::set<std::uint32_t> hop_triples;
    for (auto e : frontier)
      for (auto idx : g.incident(e))
        if (keep.count(g.triples()[idx].relation) && !taken.count(idx)) hop_triples.insert(idx);

    std::vector<EntityId> next;
    for (auto idx : hop_triples) {
      const auto& t = g.triples()[idx];
      std::vector<EntityId> fresh;
      for (auto e : {t.head, t.tail})
        if (!included.count(e) && std::find(fresh.begin(), fresh.end(), e) == fresh.end()) fresh.push_back(e);
      if (included.size() + fresh.size() > cfg.entity_cap) continue;
      taken.insert(idx);
      sg.triples.push_back(t);
      for (auto e : fresh) {
        included.insert(e);
        next.push_back(e);
      }
    }
    frontier = std::move(next);
  }
  return sg;
}

Subgraph retrieve_subgraph(const ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab,
                           std::string_view question, const std::vector<EntityId>& topics,
                           const RetrievalConfig& cfg, const InputOptions& opts) {
  return retrieve_subgraph(g, topics, model_scorer(params, g, vocab, std::string(question), opts), cfg);
}

double answer_recall(const std::vector<QASample>& samples, const std::vector<Subgraph>& retrieved) {
  if (samples.size() != retrieved.size()) throw std::invalid_argument("answer_recall: size mismatch");
  if (samples.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& sg = retrieved[i];
    bool any = std::any_of(samples[i].answers.begin(), samples[i].answers.end(),
                           [&](EntityId a) { return sg.contains(a); });
    hit += any ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(samples.size());
}

}  // namespace kgr
