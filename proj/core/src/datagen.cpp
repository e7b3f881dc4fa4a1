#include "kgr/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <iostream>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace kgr {

using nlohmann::json;

std::vector<Triple> ReasoningPath::triples() const {
  std::vector<Triple> out;
  EntityId prev = start;
  for (const auto& s : steps) {
    out.push_back(s.inverse ? Triple{s.entity, s.relation, prev} : Triple{prev, s.relation, s.entity});
    prev = s.entity;
  }
  return out;
}

std::vector<EntityId> ReasoningPath::entities() const {
  std::vector<EntityId> out{start};
  for (const auto& s : steps) out.push_back(s.entity);
  return out;
}

void QuestionTemplate::validate() const {
  if (hops < 1 || hops > 4) throw std::invalid_argument("template hops must be in [1, 4]");
  if (pattern.find("{e0}") == std::string::npos) throw std::invalid_argument("template lacks {e0}: " + pattern);
  static const std::regex placeholder(R"(\{r(\d+)\})");
  std::set<int> seen;
  for (auto it = std::sregex_iterator(pattern.begin(), pattern.end(), placeholder); it != std::sregex_iterator(); ++it)
    seen.insert(std::stoi((*it)[1]));
  std::set<int> expected;
  for (int i = 1; i <= hops; ++i) expected.insert(i);
  if (seen != expected)
    throw std::invalid_argument("template relation placeholders do not match " + std::to_string(hops) +
                                " hops: " + pattern);
}

std::vector<QuestionTemplate> default_templates() {
  return {
      {1, "what is the {r1} of {e0}?"},
      {1, "which entity is the {r1} of {e0}?"},
      {1, "tell me the {r1} of {e0}."},
      {2, "what is the {r2} of the {r1} of {e0}?"},
      {2, "which entity is the {r2} of the {r1} of {e0}?"},
      {2, "starting at {e0}, follow {r1} then {r2}: what do you reach?"},
      {3, "what is the {r3} of the {r2} of the {r1} of {e0}?"},
      {3, "which entity is the {r3} of the {r2} of the {r1} of {e0}?"},
      {3, "starting at {e0}, follow {r1} then {r2} then {r3}: what do you reach?"},
      {4, "what is the {r4} of the {r3} of the {r2} of the {r1} of {e0}?"},
      {4, "starting at {e0}, follow {r1} then {r2} then {r3} then {r4}: what do you reach?"},
  };
}

ReasoningPath sample_path(const KnowledgeGraph& g, EntityId topic, int max_hops, Rng& rng) {
  return sample_path(g, topic, 1, max_hops, rng);
}

ReasoningPath sample_path(const KnowledgeGraph& g, EntityId topic, int min_hops, int max_hops, Rng& rng) {
  if (min_hops < 1 || max_hops > 4 || min_hops > max_hops)
    throw std::invalid_argument("sample_path: hop bounds must satisfy 1 <= min <= max <= 4");
  if (!g.valid(topic)) throw std::out_of_range("sample_path: unknown topic");

  ReasoningPath path;
  path.start = topic;
  path.requested_hops = std::uniform_int_distribution<int>(min_hops, max_hops)(rng);

  std::set<EntityId> on_path{topic};
  EntityId cur = topic;
  std::vector<std::uint32_t> candidates;
  for (int step = 0; step < path.requested_hops; ++step) {
    candidates.clear();
    for (auto idx : g.incident(cur))
      if (!on_path.count(g.triples()[idx].other(cur))) candidates.push_back(idx);
    if (candidates.empty()) {
      path.shortened = true;
      break;
    }
    auto pick = std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng);
    const Triple& t = g.triples()[candidates[pick]];
    PathStep s{t.relation, t.other(cur), t.head != cur};
    path.steps.push_back(s);
    on_path.insert(s.entity);
    cur = s.entity;
  }
  if (path.steps.empty()) throw std::invalid_argument("sample_path: topic '" + g.entity_label(topic) + "' has no walkable triple");
  return path;
}

std::vector<EntityId> path_answers(const KnowledgeGraph& g, const ReasoningPath& path) {
  std::set<EntityId> frontier{path.start};
  for (const auto& step : path.steps) {
    std::set<EntityId> next;
    for (auto e : frontier)
      for (auto idx : g.incident(e)) {
        const auto& t = g.triples()[idx];
        if (t.relation == step.relation) next.insert(t.other(e));
      }
    frontier = std::move(next);
  }
  frontier.erase(path.start);
  frontier.insert(path.answer());
  return {frontier.begin(), frontier.end()};
}

Subgraph extract_subgraph(const KnowledgeGraph& g, const ReasoningPath& path, std::size_t entity_budget, Rng& rng) {
  auto path_entities = path.entities();
  std::set<EntityId> included(path_entities.begin(), path_entities.end());
  if (entity_budget < included.size())
    throw std::invalid_argument("extract_subgraph: entity budget " + std::to_string(entity_budget) +
                                " below the path's " + std::to_string(included.size()) + " entities");

  Subgraph sg;
  sg.topics = {path.start};
  std::set<Triple> chosen;
  for (const auto& t : path.triples())
    if (chosen.insert(t).second) sg.triples.push_back(t);

  std::deque<EntityId> queue(path_entities.begin(), path_entities.end());
  std::set<EntityId> expanded;
  std::vector<std::uint32_t> candidates;
  while (!queue.empty() && included.size() < entity_budget) {
    EntityId e = queue.front();
    queue.pop_front();
    if (!expanded.insert(e).second) continue;
    auto inc = g.incident(e);
    candidates.assign(inc.begin(), inc.end());
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (auto idx : candidates) {
      if (included.size() >= entity_budget) break;
      const Triple& t = g.triples()[idx];
      if (chosen.count(t)) continue;
      EntityId far = t.other(e);
      if (!included.count(far)) {
        included.insert(far);
        queue.push_back(far);
      }
      chosen.insert(t);
      sg.triples.push_back(t);
    }
  }
  std::shuffle(sg.triples.begin(), sg.triples.end(), rng);
  return sg;
}

std::string synthesize_question(const KnowledgeGraph& g, const ReasoningPath& path,
                                const std::vector<QuestionTemplate>& templates, Rng& rng) {
  std::vector<const QuestionTemplate*> matching;
  for (const auto& t : templates)
    if (t.hops == path.hops()) matching.push_back(&t);
  if (matching.empty())
    throw std::invalid_argument("synthesize_question: no template for " + std::to_string(path.hops()) + " hops");
  const auto& tpl = *matching[std::uniform_int_distribution<std::size_t>(0, matching.size() - 1)(rng)];

  std::string out = tpl.pattern;
  auto replace_all = [&](const std::string& key, const std::string& value) {
    for (auto pos = out.find(key); pos != std::string::npos; pos = out.find(key, pos + value.size()))
      out.replace(pos, key.size(), value);
  };
  replace_all("{e0}", g.entity_label(path.start));
  for (int i = 0; i < path.hops(); ++i)
    replace_all("{r" + std::to_string(i + 1) + "}", g.relation_label(path.steps[static_cast<std::size_t>(i)].relation));
  return out;
}

std::vector<EntityId> popular_topics(const KnowledgeGraph& g, double quantile) {
  std::vector<EntityId> ids;
  for (std::uint32_t i = 0; i < g.num_entities(); ++i)
    if (g.degree(EntityId{i}) > 0) ids.push_back(EntityId{i});
  std::stable_sort(ids.begin(), ids.end(), [&](EntityId a, EntityId b) { return g.degree(a) > g.degree(b); });
  auto keep = static_cast<std::size_t>(std::ceil(std::clamp(quantile, 0.0, 1.0) * static_cast<double>(ids.size())));
  ids.resize(std::max<std::size_t>(std::min(keep, ids.size()), ids.empty() ? 0 : 1));
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<QASample> generate_samples(const KnowledgeGraph& g, std::size_t n_samples,
                                       const std::vector<EntityId>& topic_pool, const DatagenConfig& cfg,
                                       DatagenStats* stats) {
  if (n_samples == 0) throw std::invalid_argument("generate_samples: n_samples must be >= 1");
  if (topic_pool.empty()) throw std::invalid_argument("generate_samples: topic pool is empty");
  for (const auto& t : cfg.templates) t.validate();

  DatagenStats local;
  std::vector<EntityId> usable;
  for (auto e : topic_pool) {
    bool walkable = false;
    for (auto idx : g.incident(e)) walkable = walkable || g.triples()[idx].other(e) != e;
    if (walkable) {
      usable.push_back(e);
    } else {
      ++local.skipped_topics;
      std::cerr << "warning: topic '" << g.entity_label(e) << "' has no walkable triple; skipped\n";
    }
  }
  if (usable.empty()) throw std::invalid_argument("generate_samples: every topic in the pool is isolated");

  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(n_samples)));
  std::vector<QASample> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    QASample s;
    // Retry with fresh sub-streams if a dead end leaves the walk below min_hops.
    for (std::uint64_t attempt = 0;; ++attempt) {
      Rng rng(derive_seed(derive_seed(cfg.seed, i), attempt));
      EntityId topic = usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)];
      auto path = sample_path(g, topic, cfg.min_hops, cfg.max_hops, rng);
      if (path.hops() < cfg.min_hops) {
        if (attempt > 1000) throw std::runtime_error("generate_samples: cannot realize min_hops walks");
        continue;
      }
      s.path = path;
      s.topics = {topic};
      s.subgraph = extract_subgraph(g, path, std::max(cfg.entity_budget, path.entities().size()), rng);
      s.question = synthesize_question(g, path, cfg.templates, rng);
      s.answers = path_answers(g, path);
      break;
    }
    s.id = "q" + std::to_string(i);
    s.split = i >= n_samples - n_val ? "validation" : "train";
    out.push_back(std::move(s));
  }
  local.generated = out.size();
  local.validation = n_val;
  if (stats) *stats = local;
  return out;
}

std::vector<QARecord> generate_dataset(const KnowledgeGraph& g, std::size_t n_samples,
                                       const std::vector<EntityId>& topic_pool, const DatagenConfig& cfg,
                                       const std::filesystem::path& out, DatagenStats* stats) {
  std::vector<QARecord> records;
  for (const auto& s : generate_samples(g, n_samples, topic_pool, cfg, stats)) records.push_back(to_record(s, g));
  write_records(out, records);
  return records;
}

QARecord to_record(const QASample& s, const KnowledgeGraph& g) {
  QARecord r;
  r.id = s.id;
  r.question = s.question;
  for (auto e : s.topics) r.topics.push_back(g.entity_label(e));
  for (const auto& t : s.subgraph.triples)
    r.triples.push_back({g.entity_label(t.head), g.relation_label(t.relation), g.entity_label(t.tail)});
  for (auto e : s.answers) r.answers.push_back(g.entity_label(e));
  if (!s.path.steps.empty()) {
    r.path.push_back(g.entity_label(s.path.start));
    for (const auto& st : s.path.steps) {
      r.path.push_back((st.inverse ? "^" : "") + g.relation_label(st.relation));
      r.path.push_back(g.entity_label(st.entity));
    }
  }
  r.hops = s.path.hops();
  r.split = s.split;
  return r;
}

QASample from_record(const QARecord& r, KnowledgeGraph& symbols) {
  QASample s;
  s.id = r.id;
  s.question = r.question;
  s.split = r.split;
  for (const auto& t : r.topics) s.topics.push_back(symbols.add_entity(t));
  for (const auto& t : r.triples) {
    Triple tr{symbols.add_entity(t.head), symbols.add_relation(t.relation), symbols.add_entity(t.tail)};
    symbols.add(tr);
    s.subgraph.triples.push_back(tr);
  }
  s.subgraph.topics = s.topics;
  for (const auto& a : r.answers) s.answers.push_back(symbols.add_entity(a));
  if (!r.path.empty()) {
    if (r.path.size() % 2 == 0) throw std::invalid_argument("record " + r.id + ": path must have odd length");
    s.path.start = symbols.add_entity(r.path[0]);
    for (std::size_t i = 1; i + 1 < r.path.size(); i += 2) {
      std::string rel = r.path[i];
      bool inverse = !rel.empty() && rel[0] == '^';
      if (inverse) rel.erase(0, 1);
      s.path.steps.push_back({symbols.add_relation(rel), symbols.add_entity(r.path[i + 1]), inverse});
    }
    s.path.requested_hops = s.path.hops();
  }
  return s;
}

std::string to_json_line(const QARecord& r) {
  json j;
  j["id"] = r.id;
  j["question"] = r.question;
  j["topics"] = r.topics;
  json triples = json::array();
  for (const auto& t : r.triples) triples.push_back({t.head, t.relation, t.tail});
  j["triples"] = std::move(triples);
  j["answers"] = r.answers;
  j["path"] = r.path;
  j["hops"] = r.hops;
  j["split"] = r.split;
  return j.dump();
}

QARecord parse_json_line(const std::string& line) try {
  json j = json::parse(line);
  QARecord r;
  r.id = j.value("id", "");
  r.question = j.at("question").get<std::string>();
  r.topics = j.at("topics").get<std::vector<std::string>>();
  for (const auto& t : j.at("triples")) {
    if (!t.is_array() || t.size() != 3) throw std::invalid_argument("record " + r.id + ": triple must have 3 labels");
    r.triples.push_back({t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>()});
  }
  r.answers = j.at("answers").get<std::vector<std::string>>();
  r.path = j.value("path", std::vector<std::string>{});
  r.hops = j.value("hops", 0);
  r.split = j.value("split", "train");
  return r;
} catch (const json::exception& e) {
  throw std::runtime_error(std::string("malformed record: ") + e.what());
}

void write_records(std::ostream& os, const std::vector<QARecord>& records) {
  for (const auto& r : records) os << to_json_line(r) << '\n';
}

void write_records(const std::filesystem::path& path, const std::vector<QARecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_records(out, records);
}

std::vector<QARecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<QARecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_json_line(line));
    } catch (const std::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return out;
}

std::size_t apply_question_overrides(std::vector<QARecord>& records, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::map<std::string, std::string> overrides;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected id<TAB>question", line_no);
    overrides[line.substr(0, tab)] = line.substr(tab + 1);
  }
  std::size_t changed = 0;
  for (auto& r : records) {
    auto it = overrides.find(r.id);
    if (it != overrides.end()) {
      r.question = it->second;
      ++changed;
    }
  }
  return changed;
}

std::vector<std::string> validate_record(const QARecord& r) {
  std::vector<std::string> problems;
  if (r.question.empty()) problems.push_back("empty question");
  if (r.answers.empty()) problems.push_back("no answers");
  if (r.topics.empty()) problems.push_back("no topics");

  std::set<std::string> entities(r.topics.begin(), r.topics.end());
  std::map<std::string, std::vector<std::string>> adj;
  std::set<std::tuple<std::string, std::string, std::string>> triples;
  for (const auto& t : r.triples) {
    entities.insert(t.head);
    entities.insert(t.tail);
    adj[t.head].push_back(t.tail);
    adj[t.tail].push_back(t.head);
    triples.emplace(t.head, t.relation, t.tail);
  }
  std::set<std::string> triple_entities;
  for (const auto& t : r.triples) {
    triple_entities.insert(t.head);
    triple_entities.insert(t.tail);
  }
  if (!r.triples.empty())
    for (const auto& t : r.topics)
      if (!triple_entities.count(t)) problems.push_back("topic '" + t + "' not in subgraph");

  if (r.path.empty()) return problems;
  if (r.path.size() != static_cast<std::size_t>(2 * r.hops + 1)) {
    problems.push_back("path length does not match hops");
    return problems;
  }
  if (std::find(r.topics.begin(), r.topics.end(), r.path.front()) == r.topics.end())
    problems.push_back("path does not start at a topic");
  for (std::size_t i = 1; i + 1 < r.path.size(); i += 2) {
    std::string rel = r.path[i];
    bool inverse = !rel.empty() && rel[0] == '^';
    if (inverse) rel.erase(0, 1);
    const auto& a = r.path[i - 1];
    const auto& b = r.path[i + 1];
    auto key = inverse ? std::make_tuple(b, rel, a) : std::make_tuple(a, rel, b);
    if (!triples.count(key)) problems.push_back("path triple (" + std::get<0>(key) + ", " + rel + ", " + std::get<2>(key) + ") missing from subgraph");
  }
  const auto& answer = r.path.back();
  if (std::find(r.answers.begin(), r.answers.end(), answer) == r.answers.end())
    problems.push_back("path end '" + answer + "' not among answers");

  // Shortest-path distance from the topic inside the subgraph.
  std::map<std::string, int> dist{{r.path.front(), 0}};
  std::deque<std::string> q{r.path.front()};
  while (!q.empty()) {
    auto e = q.front();
    q.pop_front();
    for (const auto& n : adj[e])
      if (!dist.count(n)) {
        dist[n] = dist[e] + 1;
        q.push_back(n);
      }
  }
  auto it = dist.find(answer);
  if (it == dist.end() || it->second > r.hops) problems.push_back("answer not reachable within hops");
  return problems;
}

KnowledgeGraph synthetic_graph(const SyntheticGraphConfig& cfg) {
  static const std::vector<std::string> kRelationNames = {
      "located in", "member of", "spouse", "child", "employer", "founded by", "works with", "part of",
      "owned by", "neighbor", "author", "studied at", "directed by", "plays for", "language",
      "capital", "sibling", "mentor", "rival", "produced by", "sponsor", "ally", "citizen", "founder"};
  if (cfg.entities < 2) throw std::invalid_argument("synthetic_graph: need at least 2 entities");
  if (cfg.relations < 1) throw std::invalid_argument("synthetic_graph: need at least 1 relation");

  KnowledgeGraph g;
  for (std::size_t i = 0; i < cfg.entities; ++i) g.add_entity("e" + std::to_string(i));
  for (std::size_t i = 0; i < cfg.relations; ++i)
    g.add_relation(i < kRelationNames.size() ? kRelationNames[i] : "relation " + std::to_string(i));

  Rng rng(cfg.seed);
  std::uniform_int_distribution<std::uint32_t> rel(0, static_cast<std::uint32_t>(cfg.relations - 1));
  std::uniform_int_distribution<std::uint32_t> ent(0, static_cast<std::uint32_t>(cfg.entities - 1));
  for (std::uint32_t h = 0; h < cfg.entities; ++h) {
    for (std::size_t k = 0; k < cfg.triples_per_entity; ++k) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        EntityId t{ent(rng)};
        if (t.value == h) continue;
        if (g.add(Triple{EntityId{h}, RelationId{rel(rng)}, t})) break;
      }
    }
  }
  return g;
}

}  // namespace kgr
