#include "kgr/kg.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace kgr {

std::uint32_t SymbolTable::intern(std::string_view label) {
  auto it = index_.find(std::string(label));
  if (it != index_.end()) return it->second;
  auto id = static_cast<std::uint32_t>(labels_.size());
  labels_.emplace_back(label);
  index_.emplace(labels_.back(), id);
  return id;
}

std::optional<std::uint32_t> SymbolTable::find(std::string_view label) const {
  auto it = index_.find(std::string(label));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& SymbolTable::label(std::uint32_t id) const {
  if (id >= labels_.size()) throw std::out_of_range("symbol id " + std::to_string(id) + " out of range");
  return labels_[id];
}

namespace {

std::uint64_t triple_key(const Triple& t) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::uint32_t v : {t.head.value, t.relation.value, t.tail.value}) {
    h ^= v;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

EntityId KnowledgeGraph::add_entity(std::string_view label) {
  EntityId e{entities_.intern(label)};
  if (incidence_.size() < entities_.size()) incidence_.resize(entities_.size());
  return e;
}

RelationId KnowledgeGraph::add_relation(std::string_view label) {
  return RelationId{relations_.intern(label)};
}

bool KnowledgeGraph::add(std::string_view head, std::string_view relation, std::string_view tail) {
  EntityId h = add_entity(head);
  RelationId r = add_relation(relation);
  EntityId t = add_entity(tail);
  return add(Triple{h, r, t});
}

bool KnowledgeGraph::add(Triple t) {
  check(t.head);
  check(t.tail);
  if (!valid(t.relation)) throw std::out_of_range("relation id out of range");
  auto& bucket = dedup_[triple_key(t)];
  for (auto idx : bucket)
    if (triples_[idx] == t) return false;
  auto idx = static_cast<std::uint32_t>(triples_.size());
  bucket.push_back(idx);
  triples_.push_back(t);
  incidence_[t.head.value].push_back(idx);
  if (t.tail != t.head) incidence_[t.tail.value].push_back(idx);
  return true;
}

std::optional<EntityId> KnowledgeGraph::find_entity(std::string_view label) const {
  if (auto id = entities_.find(label)) return EntityId{*id};
  return std::nullopt;
}

std::optional<RelationId> KnowledgeGraph::find_relation(std::string_view label) const {
  if (auto id = relations_.find(label)) return RelationId{*id};
  return std::nullopt;
}

EntityId KnowledgeGraph::entity(std::string_view label) const {
  if (auto e = find_entity(label)) return *e;
  throw std::out_of_range("unknown entity '" + std::string(label) + "'");
}

RelationId KnowledgeGraph::relation(std::string_view label) const {
  if (auto r = find_relation(label)) return *r;
  throw std::out_of_range("unknown relation '" + std::string(label) + "'");
}

void KnowledgeGraph::check(EntityId e) const {
  if (!valid(e)) throw std::out_of_range("entity id " + std::to_string(e.value) + " out of range");
}

std::span<const std::uint32_t> KnowledgeGraph::incident(EntityId e) const {
  check(e);
  return incidence_[e.value];
}

std::vector<Triple> KnowledgeGraph::neighborhood(EntityId e) const {
  std::vector<Triple> out;
  for (auto idx : incident(e)) out.push_back(triples_[idx]);
  return out;
}

std::vector<RelationId> KnowledgeGraph::outgoing_relations(EntityId e) const {
  std::vector<RelationId> out;
  for (auto idx : incident(e)) out.push_back(triples_[idx].relation);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool KnowledgeGraph::contains(const Triple& t) const {
  auto it = dedup_.find(triple_key(t));
  if (it == dedup_.end()) return false;
  return std::any_of(it->second.begin(), it->second.end(),
                     [&](std::uint32_t idx) { return triples_[idx] == t; });
}

bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
  return a.entity_labels() == b.entity_labels() && a.relation_labels() == b.relation_labels() &&
         a.triples_ == b.triples_ && a.incidence_ == b.incidence_;
}

namespace {

std::vector<std::string> read_symbol_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void parse_into(KnowledgeGraph& g, std::string_view text, std::string_view source) {
  std::size_t line_no = 0;
  std::size_t parsed = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;

    std::string_view fields[3];
    std::size_t n = 0;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      if (n == 3) {
        n = 4;
        break;
      }
      fields[n++] = line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start);
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    if (n != 3 || fields[0].empty() || fields[1].empty() || fields[2].empty()) {
      std::ostringstream msg;
      msg << source << ":" << line_no << ": expected 3 tab-separated fields";
      throw ParseError(msg.str(), line_no);
    }
    g.add(fields[0], fields[1], fields[2]);
    ++parsed;
  }
  if (parsed == 0) throw ParseError(std::string(source) + ": no triples", 0);
}

}  // namespace

KnowledgeGraph parse_graph(std::string_view text, std::string_view source) {
  KnowledgeGraph g;
  parse_into(g, text, source);
  return g;
}

KnowledgeGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();

  KnowledgeGraph g;
  auto dir = path.parent_path();
  if (std::filesystem::exists(dir / "entities.txt"))
    for (const auto& label : read_symbol_file(dir / "entities.txt")) g.add_entity(label);
  if (std::filesystem::exists(dir / "relations.txt"))
    for (const auto& label : read_symbol_file(dir / "relations.txt")) g.add_relation(label);
  parse_into(g, text, path.string());
  return g;
}

void save_graph(const KnowledgeGraph& g, const std::filesystem::path& path, bool write_symbol_files) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& t : g.triples())
    out << g.entity_label(t.head) << '\t' << g.relation_label(t.relation) << '\t'
        << g.entity_label(t.tail) << '\n';
  if (!write_symbol_files) return;
  auto dir = path.parent_path();
  std::ofstream ents(dir / "entities.txt", std::ios::binary);
  for (const auto& l : g.entity_labels()) ents << l << '\n';
  std::ofstream rels(dir / "relations.txt", std::ios::binary);
  for (const auto& l : g.relation_labels()) rels << l << '\n';
}

}  // namespace kgr
