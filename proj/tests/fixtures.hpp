#pragma once
// Shared fixtures and reference oracles for the unit and acceptance tests.

#include <algorithm>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "kgr/datagen.hpp"
#include "kgr/encoder.hpp"
#include "kgr/kg.hpp"
#include "kgr/model.hpp"
#include "kgr/serializer.hpp"

namespace kgr::fx {

// A -r-> B, B -s-> C, A -s-> D
inline KnowledgeGraph tiny_graph() { return parse_graph("A\tr\tB\nB\ts\tC\nA\ts\tD\n", "tiny"); }

// Reference serialization written independently of the frontier loop: every
// triple gets hop = min BFS distance of its endpoints from the topics, triples
// are stably sorted by hop (unreachable last), topics come first, and tokens
// are appended with first-occurrence dedup.
inline SerializedSubgraph oracle_serialize(const Subgraph& sg) {
  constexpr int kInf = std::numeric_limits<int>::max();
  std::map<EntityId, int> dist;
  for (auto t : sg.topics) dist[t] = 0;
  bool changed = true;
  while (changed) {  // Bellman-Ford style relaxation, no queue
    changed = false;
    for (const auto& t : sg.triples) {
      for (auto [a, b] : {std::pair{t.head, t.tail}, std::pair{t.tail, t.head}}) {
        auto it = dist.find(a);
        if (it == dist.end()) continue;
        auto cand = it->second + 1;
        auto jt = dist.find(b);
        if (jt == dist.end() || jt->second > cand) {
          dist[b] = cand;
          changed = true;
        }
      }
    }
  }
  auto hop = [&](const Triple& t) {
    int h = kInf;
    for (auto e : {t.head, t.tail})
      if (dist.count(e)) h = std::min(h, dist[e]);
    return h;
  };
  std::vector<std::size_t> order(sg.triples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return hop(sg.triples[a]) < hop(sg.triples[b]); });

  SerializedSubgraph out;
  auto pos = [&](NodeToken tok) {
    auto it = std::find(out.tokens.begin(), out.tokens.end(), tok);
    if (it != out.tokens.end()) return static_cast<std::uint32_t>(it - out.tokens.begin());
    out.tokens.push_back(tok);
    return static_cast<std::uint32_t>(out.tokens.size() - 1);
  };
  for (auto t : sg.topics) {
    bool fresh = std::find(out.tokens.begin(), out.tokens.end(), NodeToken::entity(t)) == out.tokens.end();
    auto p = pos(NodeToken::entity(t));
    if (fresh) out.topic_positions.push_back(p);
  }
  std::set<std::pair<std::uint32_t, std::uint32_t>> adj;
  for (auto i : order) {
    const auto& t = sg.triples[i];
    if (hop(t) == kInf) out.has_unreachable = true;
    std::uint32_t p[3] = {pos(NodeToken::entity(t.head)), pos(NodeToken::relation(t.relation)),
                          pos(NodeToken::entity(t.tail))};
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (p[a] < p[b]) adj.emplace(p[a], p[b]);
  }
  out.adjacency.assign(adj.begin(), adj.end());
  return out;
}

// Random graph over `n_entities` / `n_relations` with `n_triples` draws
// (duplicates collapse).
inline KnowledgeGraph random_graph(std::size_t n_entities, std::size_t n_relations, std::size_t n_triples, Rng& rng) {
  KnowledgeGraph g;
  for (std::size_t i = 0; i < n_entities; ++i) g.add_entity("n" + std::to_string(i));
  for (std::size_t i = 0; i < n_relations; ++i) g.add_relation("p" + std::to_string(i));
  std::uniform_int_distribution<std::uint32_t> ent(0, static_cast<std::uint32_t>(n_entities - 1));
  std::uniform_int_distribution<std::uint32_t> rel(0, static_cast<std::uint32_t>(n_relations - 1));
  for (std::size_t i = 0; i < n_triples; ++i) g.add(Triple{EntityId{ent(rng)}, RelationId{rel(rng)}, EntityId{ent(rng)}});
  return g;
}

inline ModelConfig small_config(int vocab_size) {
  ModelConfig c;
  c.layers = 2;
  c.d = 16;
  c.heads = 2;
  c.d_ff = 32;
  c.adapter_width = 4;
  c.vocab_size = vocab_size;
  c.max_len = 64;
  c.dropout = 0.0;
  c.seed = 5;
  return c;
}

// Fills every tensor (including zero-initialised ones) with N(0, scale) so
// finite-difference checks exercise all paths.
inline void randomize(ModelParameters& p, std::uint64_t seed, double scale = 0.3) {
  Rng rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& t : p.tensors())
    for (Eigen::Index i = 0; i < t.value.size(); ++i) t.value.data()[i] = dist(rng);
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::set<std::string> groups;
};

// Example over the tiny graph with a two-answer target.
inline Example tiny_example(const Vocabulary& vocab, bool structural = true) {
  auto g = tiny_graph();
  QASample s;
  s.id = "fd";
  s.question = "what is the s of the r of A?";
  s.topics = {g.entity("A")};
  s.subgraph = Subgraph{{g.entity("A")}, g.triples()};
  s.answers = {g.entity("C"), g.entity("D")};
  return make_reasoning_example(s, g, vocab, InputOptions{512, structural});
}

inline Vocabulary tiny_vocabulary() {
  std::vector<std::string> corpus{"what is the s of the r of A?", "A B C D r s"};
  return Vocabulary::build(corpus);
}

// Central differences (eps 1e-4) on `per_tensor` random coordinates of every
// trainable tensor whose name contains one of `filters` (all when empty).
// Relative error is |a - n| / max(|a| + |n|, 1e-8). Coordinates with |a| <= 1e-6
// are not sampled: there the difference quotient is rounding noise (the key
// bias gradient, for one, is identically zero up to ~1e-20 residue).
inline GradCheck gradient_check(ModelParameters& p, const Example& ex, std::size_t per_tensor, std::uint64_t seed,
                                const std::vector<std::string>& filters = {}) {
  GradientSet grads(p);
  accumulate_example(p, ex, grads, Mode::Eval, nullptr);
  Rng rng(seed);
  GradCheck out;
  const double eps = 1e-4;
  for (std::size_t ti = 0; ti < p.tensors().size(); ++ti) {
    auto& t = p.tensors()[ti];
    if (!grads.has(ti)) continue;
    bool wanted = filters.empty();
    for (const auto& f : filters) wanted = wanted || t.name.find(f) != std::string::npos;
    if (!wanted) continue;
    std::vector<Eigen::Index> candidates;
    for (Eigen::Index i = 0; i < t.value.size(); ++i)
      if (std::abs(grads[ti].data()[i]) > 1e-6) candidates.push_back(i);
    if (candidates.empty()) continue;
    for (std::size_t k = 0; k < per_tensor; ++k) {
      auto i = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
      double& w = t.value.data()[i];
      const double orig = w;
      w = orig + eps;
      double lp = example_loss(p, ex);
      w = orig - eps;
      double lm = example_loss(p, ex);
      w = orig;
      double numeric = (lp - lm) / (2 * eps);
      double analytic = grads[ti].data()[i];
      double rel = std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
      out.max_rel_error = std::max(out.max_rel_error, rel);
      ++out.coordinates;
      out.groups.insert(t.name);
    }
  }
  return out;
}

}  // namespace kgr::fx
