#include "kgr/serializer.hpp"

#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace kgr {

std::vector<EntityId> Subgraph::entities() const {
  std::vector<EntityId> out;
  std::set<EntityId> seen;
  auto push = [&](EntityId e) {
    if (seen.insert(e).second) out.push_back(e);
  };
  for (auto e : topics) push(e);
  for (const auto& t : triples) {
    push(t.head);
    push(t.tail);
  }
  return out;
}

bool Subgraph::contains(EntityId e) const {
  if (std::find(topics.begin(), topics.end(), e) != topics.end()) return true;
  return std::any_of(triples.begin(), triples.end(), [&](const Triple& t) { return t.touches(e); });
}

bool SerializedSubgraph::adjacent(std::uint32_t i, std::uint32_t j) const {
  if (i > j) std::swap(i, j);
  return std::binary_search(adjacency.begin(), adjacency.end(), std::make_pair(i, j));
}

std::vector<std::uint32_t> SerializedSubgraph::entity_positions() const {
  std::vector<std::uint32_t> out;
  for (std::uint32_t i = 0; i < tokens.size(); ++i)
    if (tokens[i].is_entity()) out.push_back(i);
  return out;
}

std::int64_t SerializedSubgraph::position_of(NodeToken t) const {
  auto it = std::find(tokens.begin(), tokens.end(), t);
  return it == tokens.end() ? -1 : static_cast<std::int64_t>(it - tokens.begin());
}

namespace {

class Builder {
 public:
  std::uint32_t append(NodeToken t) {
    auto [it, fresh] = index_.try_emplace(t, static_cast<std::uint32_t>(out_.tokens.size()));
    if (fresh) out_.tokens.push_back(t);
    return it->second;
  }

  void visit(const Triple& t) {
    std::uint32_t p[3] = {append(NodeToken::entity(t.head)), append(NodeToken::relation(t.relation)),
                          append(NodeToken::entity(t.tail))};
    for (int a = 0; a < 3; ++a)
      for (int b = a + 1; b < 3; ++b)
        if (p[a] != p[b]) pairs_.emplace(std::min(p[a], p[b]), std::max(p[a], p[b]));
  }

  SerializedSubgraph finish() && {
    out_.adjacency.assign(pairs_.begin(), pairs_.end());
    return std::move(out_);
  }

  SerializedSubgraph& result() { return out_; }

 private:
  SerializedSubgraph out_;
  std::map<NodeToken, std::uint32_t> index_;
  std::set<std::pair<std::uint32_t, std::uint32_t>> pairs_;
};

}  // namespace

SerializedSubgraph serialize_subgraph(const Subgraph& sg) {
  if (sg.topics.empty()) throw std::invalid_argument("serialize_subgraph: subgraph has no topic entity");

  Builder b;
  std::set<EntityId> reached;
  std::vector<EntityId> frontier;
  for (auto e : sg.topics) {
    auto pos = b.append(NodeToken::entity(e));
    if (reached.insert(e).second) {
      frontier.push_back(e);
      b.result().topic_positions.push_back(pos);
    }
  }

  std::vector<bool> visited(sg.triples.size(), false);
  while (!frontier.empty()) {
    std::set<EntityId> in_frontier(frontier.begin(), frontier.end());
    std::vector<EntityId> next;
    for (std::size_t i = 0; i < sg.triples.size(); ++i) {
      const auto& t = sg.triples[i];
      if (visited[i] || !(in_frontier.count(t.head) || in_frontier.count(t.tail))) continue;
      visited[i] = true;
      b.visit(t);
      for (auto e : {t.head, t.tail})
        if (reached.insert(e).second) next.push_back(e);
    }
    frontier = std::move(next);
  }

  for (std::size_t i = 0; i < sg.triples.size(); ++i) {
    if (visited[i]) continue;
    b.result().has_unreachable = true;
    b.visit(sg.triples[i]);
  }
  return std::move(b).finish();
}

SerializedSubgraph truncate(const SerializedSubgraph& s, std::size_t budget) {
  budget = std::max<std::size_t>(budget, 1);
  if (budget >= s.tokens.size()) return s;
  SerializedSubgraph out;
  out.has_unreachable = s.has_unreachable;
  out.tokens.assign(s.tokens.begin(), s.tokens.begin() + static_cast<std::ptrdiff_t>(budget));
  for (auto [i, j] : s.adjacency)
    if (j < budget) out.adjacency.emplace_back(i, j);
  for (auto p : s.topic_positions)
    if (p < budget) out.topic_positions.push_back(p);
  return out;
}

const std::string& token_label(const NodeToken& t, const KnowledgeGraph& g) {
  return t.is_entity() ? g.entity_label(EntityId{t.id}) : g.relation_label(RelationId{t.id});
}

void dump(std::ostream& os, const SerializedSubgraph& s, const KnowledgeGraph& g) {
  for (std::size_t i = 0; i < s.tokens.size(); ++i)
    os << i << '\t' << (s.tokens[i].is_entity() ? "entity" : "relation") << '\t'
       << token_label(s.tokens[i], g) << '\n';
  for (auto [i, j] : s.adjacency) os << "adj\t" << i << '\t' << j << '\n';
}

std::string dump(const SerializedSubgraph& s, const KnowledgeGraph& g) {
  std::ostringstream os;
  dump(os, s, g);
  return os.str();
}

}  // namespace kgr
