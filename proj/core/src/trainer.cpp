#include "kgr/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "kgr/checkpoint.hpp"
#include "kgr/optim.hpp"

namespace kgr {

using nlohmann::json;

std::string to_string(Task t) {
  switch (t) {
    case Task::Adapt: return "adapt";
    case Task::FinetuneReason: return "finetune_reason";
    case Task::FinetuneRetrieve: return "finetune_retrieve";
  }
  return "?";
}

Task parse_task(std::string_view s) {
  if (s == "adapt") return Task::Adapt;
  if (s == "finetune_reason") return Task::FinetuneReason;
  if (s == "finetune_retrieve") return Task::FinetuneRetrieve;
  throw std::invalid_argument("unknown task '" + std::string(s) + "'");
}

TrainConfig TrainConfig::defaults(Task task) {
  TrainConfig c;
  c.task = task;
  switch (task) {
    case Task::Adapt:
      c.lr = 1e-4;
      c.batch_size = 40;
      c.policy = TrainPolicy::Full;
      break;
    case Task::FinetuneReason:
      c.lr = 1e-4;
      c.batch_size = 4;
      c.policy = TrainPolicy::AdaptersAndHeadOnly;
      break;
    case Task::FinetuneRetrieve:
      c.lr = 5e-5;
      c.batch_size = 10;
      c.policy = TrainPolicy::AdaptersAndHeadOnly;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (eval_interval < 1) throw std::invalid_argument("eval interval must be >= 1");
  if (patience < 1) throw std::invalid_argument("patience must be >= 1");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be >= 0");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  if (!(tau > 0.0) || tau > 1.0) throw std::invalid_argument("tau must be in (0, 1]");
  if (task == Task::Adapt && policy != TrainPolicy::Full)
    throw std::invalid_argument("adaptation tuning trains every parameter");
}

TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig c) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j = json::parse(in);
  if (!j.is_object()) throw std::invalid_argument(path.string() + ": expected a JSON object");
  for (auto& [key, v] : j.items()) {
    if (key == "task") {
      c = TrainConfig::defaults(parse_task(v.get<std::string>()));
    }
  }
  for (auto& [key, v] : j.items()) {
    if (key == "task") continue;
    else if (key == "lr") c.lr = v;
    else if (key == "batch_size") c.batch_size = v;
    else if (key == "epochs") c.epochs = v;
    else if (key == "seed") c.seed = v;
    else if (key == "eval_interval") c.eval_interval = v;
    else if (key == "patience") c.patience = v;
    else if (key == "weight_decay") c.weight_decay = v;
    else if (key == "clip_norm") c.clip_norm = v;
    else if (key == "tau") c.tau = v;
    else if (key == "policy") {
      auto p = v.get<std::string>();
      if (p == "full") c.policy = TrainPolicy::Full;
      else if (p == "adapters") c.policy = TrainPolicy::AdaptersAndHeadOnly;
      else throw std::invalid_argument("unknown policy '" + p + "'");
    } else {
      throw std::invalid_argument(path.string() + ": unknown key '" + key + "'");
    }
  }
  return c;
}

std::string RunReport::to_json() const {
  json j;
  j["task"] = task;
  j["seed"] = seed;
  json ep = json::array();
  for (const auto& e : epochs) {
    json r{{"epoch", e.epoch}, {"loss", e.loss}};
    r["val_hits_at_1"] = e.val_hits ? json(*e.val_hits) : json(nullptr);
    r["val_f1"] = e.val_f1 ? json(*e.val_f1) : json(nullptr);
    ep.push_back(std::move(r));
  }
  j["epochs"] = std::move(ep);
  j["best_epoch"] = best_epoch;
  j["best_val_hits_at_1"] = best_val_hits;
  j["best_checkpoint"] = best_checkpoint;
  j["params_total"] = params.total;
  j["params_updated"] = params.trainable;
  j["updated_fraction"] = params.fraction();
  j["train_examples"] = train_examples;
  j["skipped_examples"] = skipped_examples;
  j["wall_clock_seconds"] = wall_clock_seconds;
  j["structural_mask"] = structural_mask;
  j["skip_adapt"] = skip_adapt;
  j["diverged"] = diverged;
  if (!error.empty()) j["error"] = error;
  j["base_hash_before"] = hex64(base_hash_before);
  j["base_hash_after"] = hex64(base_hash_after);
  return j.dump(2);
}

std::string EvalReport::to_json(bool with_rows) const {
  json j{{"n", n}, {"hits_at_1", hits_at_1}, {"f1", f1}, {"precision", precision}, {"recall", recall}};
  if (with_rows) {
    json rs = json::array();
    for (const auto& r : rows)
      rs.push_back({{"id", r.id},
                    {"hops", r.hops},
                    {"answer_present", r.answer_present},
                    {"hit", r.hit},
                    {"f1", r.f1.f1},
                    {"prediction", r.prediction}});
    j["rows"] = std::move(rs);
  }
  return j.dump(2);
}

EvalReport evaluate(const ModelParameters& params, const std::vector<Example>& examples, double tau,
                    const KnowledgeGraph* symbols) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  EvalReport rep;
  rep.n = examples.size();
  for (const auto& ex : examples) {
    SampleMetrics m;
    m.id = ex.id;
    m.hops = ex.hops;
    m.answer_present = !ex.answer_positions.empty();
    if (!ex.positions.empty()) {
      auto scores = predict(params, ex);
      auto pos = scores.positions[scores.argmax()];
      if (symbols) {
        const auto& tok = ex.input.graph.tokens[pos - ex.input.question_length()];
        m.prediction = token_label(tok, *symbols);
      } else {
        m.prediction = std::to_string(pos);
      }
      if (m.answer_present) {
        m.hit = hits_at_1(scores, ex.answer_positions);
        m.f1 = f1_score(scores, ex.answer_positions, std::max(ex.gold_count, ex.answer_positions.size()), tau);
      }
    }
    rep.hits_at_1 += m.hit;
    rep.f1 += m.f1.f1;
    rep.precision += m.f1.precision;
    rep.recall += m.f1.recall;
    rep.rows.push_back(std::move(m));
  }
  const double n = static_cast<double>(rep.n);
  rep.hits_at_1 /= n;
  rep.f1 /= n;
  rep.precision /= n;
  rep.recall /= n;
  return rep;
}

namespace {

RunReport train_loop(ModelParameters& params, const std::vector<Example>& train, const std::vector<Example>& val,
                     const TrainConfig& cfg) {
  auto t0 = std::chrono::steady_clock::now();
  RunReport rep;
  rep.task = to_string(cfg.task);
  rep.seed = cfg.seed;
  rep.params = params.set_trainable(cfg.policy);

  std::vector<const Example*> usable;
  for (const auto& ex : train) {
    if (ex.target) usable.push_back(&ex);
    else ++rep.skipped_examples;
  }
  rep.train_examples = usable.size();

  AdamW opt(AdamWConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
  Rng order_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  std::vector<std::size_t> order(usable.size());
  std::iota(order.begin(), order.end(), 0);

  ModelParameters best = params;
  double best_hits = -1.0;
  int since_best = 0;
  GradientSet grads(params);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    double total = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        std::size_t end = std::min(order.size(), start + cfg.batch_size);
        grads.zero();
        for (std::size_t i = start; i < end; ++i) {
          double loss = accumulate_example(params, *usable[order[i]], grads, Mode::Train, &dropout_rng);
          if (!std::isfinite(loss)) throw NonFiniteError("non-finite loss on " + usable[order[i]]->id);
          total += loss;
        }
        grads.scale(1.0 / static_cast<double>(end - start));
        clip_global_norm(grads, cfg.clip_norm);
        opt.step(params, grads);
      }
    } catch (const NonFiniteError& e) {
      rep.diverged = true;
      rep.error = std::string("epoch ") + std::to_string(epoch) + ": " + e.what();
      break;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = usable.empty() ? 0.0 : total / static_cast<double>(usable.size());
    bool stop = false;
    if (!val.empty() && (epoch % cfg.eval_interval == 0 || epoch == cfg.epochs)) {
      auto ev = evaluate(params, val, cfg.tau);
      rec.val_hits = ev.hits_at_1;
      rec.val_f1 = ev.f1;
      if (ev.hits_at_1 > best_hits) {
        best_hits = ev.hits_at_1;
        best = params;
        rep.best_epoch = epoch;
        since_best = 0;
      } else if (++since_best >= cfg.patience) {
        stop = true;
      }
    }
    rep.epochs.push_back(rec);
    if (stop) break;
  }

  if (val.empty()) {
    rep.best_epoch = rep.epochs.empty() ? 0 : rep.epochs.back().epoch;
  } else if (best_hits >= 0.0) {
    params = std::move(best);
    rep.best_val_hits = best_hits;
  }
  rep.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace

RunReport adapt_tune(ModelParameters& params, const std::vector<Example>& train, const std::vector<Example>& val,
                     const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.task != Task::Adapt) throw std::logic_error("adapt_tune needs the adapt task");
  if (params.active()) throw std::logic_error("adapt_tune runs on the base model; deactivate adapters first");
  auto before = params.base_hash();
  auto rep = train_loop(params, train, val, cfg);
  rep.base_hash_before = before;
  rep.base_hash_after = params.base_hash();
  return rep;
}

RunReport fine_tune(ModelParameters& params, const std::vector<Example>& train, const std::vector<Example>& val,
                    const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.task == Task::Adapt) throw std::logic_error("fine_tune needs a finetune task");
  if (cfg.policy != TrainPolicy::AdaptersAndHeadOnly)
    throw std::logic_error("fine_tune: policy must be adapter-only");
  if (!params.active()) throw std::logic_error("fine_tune: no adapter set is active");
  auto before = params.base_hash();
  auto rep = train_loop(params, train, val, cfg);
  rep.base_hash_before = before;
  rep.base_hash_after = params.base_hash();
  if (rep.base_hash_after != before) throw std::logic_error("fine_tune: base weights changed");
  return rep;
}

Dataset dataset_from_records(std::vector<QARecord> records) {
  Dataset ds;
  for (const auto& r : records) ds.samples.push_back(from_record(r, ds.symbols));
  ds.records = std::move(records);
  return ds;
}

Dataset load_dataset(const std::filesystem::path& path) { return dataset_from_records(read_records(path)); }

std::vector<Example> reasoning_examples(const Dataset& ds, const Vocabulary& vocab, const InputOptions& opts,
                                        std::string_view split) {
  std::vector<Example> out;
  for (const auto& s : ds.samples)
    if (split.empty() || s.split == split) out.push_back(make_reasoning_example(s, ds.symbols, vocab, opts));
  return out;
}

InferResult answer_over(const ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab,
                        std::string_view question, const Subgraph& sg, const InputOptions& opts) {
  InferResult res;
  res.subgraph = sg;
  res.topic_only = sg.triples.empty();
  auto serialized = serialize_subgraph(sg);
  Example ex;
  ex.input = assemble_input(question, serialized, g, vocab, opts);
  ex.positions = ex.input.entity_positions;
  auto scores = predict(params, ex);
  const auto nq = ex.input.question_length();
  std::vector<std::size_t> idx(scores.positions.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores.probs[a] > scores.probs[b]; });
  for (auto i : idx)
    res.table.emplace_back(token_label(ex.input.graph.tokens[scores.positions[i] - nq], g), scores.probs[i]);
  auto best = scores.argmax();
  res.answer = token_label(ex.input.graph.tokens[scores.positions[best] - nq], g);
  res.score = scores.probs[best];
  if (res.topic_only) std::cerr << "warning: retrieved subgraph holds only the topic entities\n";
  return res;
}

InferResult infer(ModelParameters& params, const KnowledgeGraph& g, const Vocabulary& vocab, std::string_view question,
                  const std::vector<EntityId>& topics, const RetrievalConfig& rcfg, const InputOptions& opts) {
  if (!params.has_adapter_set(kRetrievalAdapter) || !params.has_adapter_set(kReasoningAdapter))
    throw std::logic_error("infer needs both the retrieval and the reasoning adapters");
  auto previous = params.active();
  try {
    params.activate(kRetrievalAdapter);
    Subgraph sg = retrieve_subgraph(params, g, vocab, question, topics, rcfg, opts);
    params.activate(kReasoningAdapter);
    auto res = answer_over(params, g, vocab, question, sg, opts);
    params.activate(previous);
    return res;
  } catch (...) {
    params.activate(previous);
    throw;
  }
}

}  // namespace kgr
