#include <benchmark/benchmark.h>

#include <map>

#include "kgr/attn_mask.hpp"
#include "kgr/datagen.hpp"
#include "kgr/model.hpp"
#include "kgr/retrieval.hpp"
#include "kgr/serializer.hpp"

namespace {

using namespace kgr;

struct Setup {
  KnowledgeGraph g = synthetic_graph({});
  std::vector<QASample> samples;
  std::vector<QARecord> records;
  Vocabulary vocab;

  explicit Setup(std::size_t budget) {
    DatagenConfig dc;
    dc.max_hops = 3;
    dc.entity_budget = budget;
    samples = generate_samples(g, 64, popular_topics(g, 1.0), dc);
    for (const auto& s : samples) records.push_back(to_record(s, g));
    vocab = build_vocabulary(records);
  }
};

const Setup& setup(std::size_t budget) {
  static std::map<std::size_t, Setup> cache;
  auto it = cache.find(budget);
  if (it == cache.end()) it = cache.emplace(budget, Setup(budget)).first;
  return it->second;
}

void BM_Serialize(benchmark::State& state) {
  const auto& s = setup(static_cast<std::size_t>(state.range(0)));
  std::size_t i = 0;
  for (auto _ : state) {
    auto out = serialize_subgraph(s.samples[i++ % s.samples.size()].subgraph);
    benchmark::DoNotOptimize(out.tokens.data());
  }
}
BENCHMARK(BM_Serialize)->Arg(12)->Arg(40);

void BM_BuildMask(benchmark::State& state) {
  const auto& s = setup(static_cast<std::size_t>(state.range(0)));
  std::vector<SerializedSubgraph> ser;
  for (const auto& q : s.samples) ser.push_back(serialize_subgraph(q.subgraph));
  std::size_t i = 0;
  for (auto _ : state) {
    auto m = build_mask(12, ser[i++ % ser.size()]);
    benchmark::DoNotOptimize(m.values.data());
  }
}
BENCHMARK(BM_BuildMask)->Arg(12)->Arg(40);

void BM_ForwardBackward(benchmark::State& state) {
  const auto& s = setup(static_cast<std::size_t>(state.range(0)));
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(s.vocab.size());
  mc.dropout = 0.0;
  auto p = ModelParameters::init(mc);
  std::vector<Example> exs;
  for (const auto& q : s.samples) exs.push_back(make_reasoning_example(q, s.g, s.vocab, {}));
  GradientSet grads(p);
  std::size_t i = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(accumulate_example(p, exs[i++ % exs.size()], grads, Mode::Eval, nullptr));
  }
  double len = 0;
  for (const auto& e : exs) len += static_cast<double>(e.input.length());
  state.counters["mean_len"] = len / static_cast<double>(exs.size());
}
BENCHMARK(BM_ForwardBackward)->Arg(12)->Arg(40)->Unit(benchmark::kMillisecond);

void BM_Predict(benchmark::State& state) {
  const auto& s = setup(12);
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(s.vocab.size());
  auto p = ModelParameters::init(mc);
  std::vector<Example> exs;
  for (const auto& q : s.samples) exs.push_back(make_reasoning_example(q, s.g, s.vocab, {}));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(predict(p, exs[i++ % exs.size()]).probs.data());
}
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

void BM_Retrieve(benchmark::State& state) {
  const auto& s = setup(12);
  ModelConfig mc;
  mc.vocab_size = static_cast<int>(s.vocab.size());
  auto p = ModelParameters::init(mc);
  RetrievalConfig rc;
  rc.k = static_cast<std::size_t>(state.range(0));
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& q = s.samples[i++ % s.samples.size()];
    auto sg = retrieve_subgraph(p, s.g, s.vocab, q.question, q.topics, rc);
    benchmark::DoNotOptimize(sg.triples.data());
  }
}
BENCHMARK(BM_Retrieve)->Arg(3)->Arg(15)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
