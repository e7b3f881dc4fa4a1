#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fixtures.hpp"
#include "kgr/checkpoint.hpp"
#include "kgr/trainer.hpp"

using namespace kgr;

namespace {

const std::string kQuestion = "what is the s of the r of A?";

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

// Two-hop fixture set over the tiny graph: each sample's answer is C or D.
Dataset fixture_dataset() {
  std::vector<QARecord> recs;
  auto add = [&](std::string id, std::string q, std::string topic, std::string answer, int hops, std::string split) {
    QARecord r;
    r.id = std::move(id);
    r.question = std::move(q);
    r.topics = {topic};
    r.triples = {{"A", "r", "B"}, {"B", "s", "C"}, {"A", "s", "D"}};
    r.answers = {std::move(answer)};
    r.hops = hops;
    r.split = std::move(split);
    recs.push_back(r);
  };
  add("t1", kQuestion, "A", "C", 2, "train");
  add("t2", "what is the s of A?", "A", "D", 1, "train");
  add("t3", "what is the r of A?", "A", "B", 1, "train");
  add("v1", kQuestion, "A", "C", 2, "validation");
  add("v2", "what is the s of A?", "A", "D", 1, "validation");
  return dataset_from_records(std::move(recs));
}

struct Fixture {
  Dataset ds = fixture_dataset();
  Vocabulary vocab = build_vocabulary(ds.records);
  std::vector<Example> train = reasoning_examples(ds, vocab, {}, "train");
  std::vector<Example> val = reasoning_examples(ds, vocab, {}, "validation");

  ModelParameters model(std::uint64_t seed = 5) const {
    auto c = fx::small_config(static_cast<int>(vocab.size()));
    c.seed = seed;
    return ModelParameters::init(c);
  }
  TrainConfig adapt(int epochs) const {
    auto cfg = TrainConfig::defaults(Task::Adapt);
    cfg.epochs = epochs;
    cfg.lr = 3e-3;
    cfg.batch_size = 2;
    cfg.patience = 1000;
    return cfg;
  }
};

}  // namespace

TEST(Trainer, DefaultsPerTask) {
  auto a = TrainConfig::defaults(Task::Adapt);
  EXPECT_DOUBLE_EQ(a.lr, 1e-4);
  EXPECT_EQ(a.batch_size, 40u);
  EXPECT_EQ(a.policy, TrainPolicy::Full);
  auto r = TrainConfig::defaults(Task::FinetuneRetrieve);
  EXPECT_DOUBLE_EQ(r.lr, 5e-5);
  EXPECT_EQ(r.batch_size, 10u);
  EXPECT_EQ(r.policy, TrainPolicy::AdaptersAndHeadOnly);
  EXPECT_EQ(TrainConfig::defaults(Task::FinetuneReason).policy, TrainPolicy::AdaptersAndHeadOnly);
  for (auto t : {Task::Adapt, Task::FinetuneReason, Task::FinetuneRetrieve}) EXPECT_EQ(parse_task(to_string(t)), t);
  EXPECT_THROW(parse_task("pretrain"), std::invalid_argument);
}

TEST(Trainer, ConfigValidation) {
  auto a = TrainConfig::defaults(Task::Adapt);
  a.policy = TrainPolicy::AdaptersAndHeadOnly;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  auto b = TrainConfig::defaults(Task::FinetuneReason);
  b.lr = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b.lr = 1e-4;
  b.batch_size = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

TEST(Trainer, ConfigFileOverrides) {
  auto path = tmp("kgr-test-train.json");
  std::ofstream(path) << R"({"lr": 0.002, "epochs": 3, "seed": 9, "policy": "full"})";
  auto cfg = load_train_config(path, TrainConfig::defaults(Task::Adapt));
  EXPECT_DOUBLE_EQ(cfg.lr, 0.002);
  EXPECT_EQ(cfg.epochs, 3);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.batch_size, 40u);
  std::ofstream(path) << R"({"learning_rate": 0.002})";
  EXPECT_THROW(load_train_config(path, TrainConfig::defaults(Task::Adapt)), std::invalid_argument);
}

TEST(Trainer, ZeroEpochsKeepsInitialization) {
  Fixture f;
  auto p = f.model();
  auto before = p.hash();
  auto rep = adapt_tune(p, f.train, f.val, f.adapt(0));
  EXPECT_EQ(p.hash(), before);
  EXPECT_TRUE(rep.epochs.empty());
}

TEST(Trainer, SameSeedSameReport) {
  Fixture f;
  auto cfg = f.adapt(4);
  auto p1 = f.model(), p2 = f.model();
  auto r1 = adapt_tune(p1, f.train, f.val, cfg);
  auto r2 = adapt_tune(p2, f.train, f.val, cfg);
  ASSERT_EQ(r1.epochs.size(), 4u);
  ASSERT_EQ(r2.epochs.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(r1.epochs[i].loss, r2.epochs[i].loss);
    EXPECT_EQ(r1.epochs[i].val_hits, r2.epochs[i].val_hits);
  }
  EXPECT_EQ(p1.hash(), p2.hash());
}

TEST(Trainer, AdaptLearnsFixtureAndReportsParams) {
  Fixture f;
  auto p = f.model();
  auto rep = adapt_tune(p, f.train, f.val, f.adapt(60));
  EXPECT_DOUBLE_EQ(rep.best_val_hits, 1.0);
  EXPECT_FALSE(rep.diverged);
  EXPECT_EQ(rep.params.trainable, rep.params.total);
  EXPECT_EQ(rep.train_examples, f.train.size());
  EXPECT_LT(rep.epochs.back().loss, rep.epochs.front().loss);
  auto json = rep.to_json();
  EXPECT_NE(json.find("\"params_updated\""), std::string::npos);
  EXPECT_NE(json.find("\"updated_fraction\""), std::string::npos);
}

TEST(Trainer, EvaluateExamples) {
  Fixture f;
  auto p = f.model();
  fx::randomize(p, 11);
  std::vector<Example> exs = f.train;
  // make the answer whatever the model currently predicts: a perfect scorer
  for (auto& ex : exs) {
    auto s = predict(p, ex);
    ex.answer_positions = {s.positions[s.argmax()]};
    ex.gold_count = 1;
  }
  EXPECT_DOUBLE_EQ(evaluate(p, exs, 0.5).hits_at_1, 1.0);
  auto wrong = exs;
  for (auto& ex : wrong) {
    auto s = predict(p, ex);
    auto other = s.positions[(s.argmax() + 1) % s.positions.size()];
    ex.answer_positions = {other};
  }
  EXPECT_DOUBLE_EQ(evaluate(p, wrong, 0.5).hits_at_1, 0.0);
  std::vector<Example> mixed{exs[0], exs[1], wrong[2]};
  auto rep = evaluate(p, mixed, 0.5);
  EXPECT_NEAR(rep.hits_at_1, 2.0 / 3.0, 1e-12);
  EXPECT_EQ(rep.rows.size(), 3u);
  EXPECT_THROW(evaluate(p, {}, 0.5), std::invalid_argument);
}

TEST(Trainer, AbsentAnswerCountsAsMiss) {
  Fixture f;
  auto p = f.model();
  auto ex = f.train[0];
  ex.answer_positions.clear();
  ex.gold_count = 1;
  auto rep = evaluate(p, {ex}, 0.5);
  EXPECT_DOUBLE_EQ(rep.hits_at_1, 0.0);
  EXPECT_FALSE(rep.rows[0].answer_present);
}

TEST(Trainer, CheckpointRoundTripReproducesMetrics) {
  Fixture f;
  auto p = f.model();
  adapt_tune(p, f.train, f.val, f.adapt(5));
  p.add_adapter_set(kReasoningAdapter);
  auto path = tmp("kgr-test-ckpt.bin");
  save_checkpoint(path, p, f.vocab);
  auto ck = load_checkpoint(path, f.vocab.hash());
  EXPECT_EQ(ck.params.hash(), p.hash());
  auto a = evaluate(p, f.val, 0.5), b = evaluate(ck.params, f.val, 0.5);
  EXPECT_EQ(a.hits_at_1, b.hits_at_1);
  EXPECT_EQ(a.f1, b.f1);
  EXPECT_THROW(load_checkpoint(path, f.vocab.hash() + 1), CheckpointError);
  std::ofstream(tmp("kgr-test-garbage.bin")) << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(tmp("kgr-test-garbage.bin")), CheckpointError);
}

TEST(Trainer, FineTunePolicyMismatch) {
  Fixture f;
  auto p = f.model();
  auto cfg = TrainConfig::defaults(Task::FinetuneReason);
  EXPECT_THROW(fine_tune(p, f.train, f.val, cfg), std::logic_error);  // no adapter active
  p.add_adapter_set(kReasoningAdapter);
  p.activate(kReasoningAdapter);
  cfg.policy = TrainPolicy::Full;
  EXPECT_THROW(fine_tune(p, f.train, f.val, cfg), std::logic_error);
  EXPECT_THROW(adapt_tune(p, f.train, f.val, f.adapt(1)), std::logic_error);  // adapter active
}

TEST(Trainer, FineTuneLeavesBaseBitIdentical) {
  Fixture f;
  auto p = f.model();
  adapt_tune(p, f.train, f.val, f.adapt(3));
  p.add_adapter_set(kReasoningAdapter);
  p.activate(kReasoningAdapter);
  auto base = p.base_hash();
  auto all = p.hash();
  auto cfg = TrainConfig::defaults(Task::FinetuneReason);
  cfg.epochs = 5;
  cfg.lr = 1e-2;
  cfg.batch_size = 1;
  auto rep = fine_tune(p, f.train, f.val, cfg);
  EXPECT_EQ(p.base_hash(), base);
  EXPECT_EQ(rep.base_hash_before, rep.base_hash_after);
  EXPECT_NE(p.hash(), all);
  EXPECT_LT(rep.params.fraction(), 0.10);
  EXPECT_GT(rep.params.trainable, 0u);
}

TEST(Trainer, PaddingDoesNotChangeLoss) {
  Fixture f;
  auto p = f.model();
  fx::randomize(p, 4);
  for (const auto& ex : f.train) {
    auto padded = ex;
    padded.input = pad_input(ex.input, ex.input.length() + 7);
    EXPECT_NEAR(example_loss(p, padded), example_loss(p, ex), 1e-12) << ex.id;
    GradientSet g1(p), g2(p);
    accumulate_example(p, ex, g1, Mode::Eval, nullptr);
    accumulate_example(p, padded, g2, Mode::Eval, nullptr);
    for (std::size_t i = 0; i < p.tensors().size(); ++i) {
      if (!g1.has(i) || p.tensors()[i].name == "position") continue;  // pad rows read their own positions
      EXPECT_TRUE(g1[i].isApprox(g2[i], 1e-9) || (g1[i] - g2[i]).norm() < 1e-12) << p.tensors()[i].name;
    }
  }
}

TEST(Trainer, DivergenceIsReported) {
  Fixture f;
  auto p = f.model();
  p.at("layer0.ffn.b2").value.setConstant(std::numeric_limits<double>::quiet_NaN());
  auto rep = adapt_tune(p, f.train, f.val, f.adapt(2));
  EXPECT_TRUE(rep.diverged);
  EXPECT_FALSE(rep.error.empty());
}

TEST(Trainer, InferAnswersFixtureQuestion) {
  Fixture f;
  auto p = f.model();
  adapt_tune(p, f.train, f.val, f.adapt(60));
  p.add_adapter_set(kRetrievalAdapter);
  p.add_adapter_set(kReasoningAdapter);
  const auto& g = f.ds.symbols;
  std::vector<EntityId> topics{g.entity("A")};
  auto r1 = infer(p, g, f.vocab, kQuestion, topics, RetrievalConfig{10, 3, 100});
  EXPECT_EQ(r1.answer, "C");
  EXPECT_FALSE(r1.topic_only);
  EXPECT_FALSE(p.active_set());
  auto r2 = infer(p, g, f.vocab, kQuestion, topics, RetrievalConfig{10, 3, 100});
  EXPECT_EQ(r1.table, r2.table);
  // large k is the whole neighbourhood: same answer as reasoning over the full graph
  p.activate(kReasoningAdapter);
  auto full = answer_over(p, g, f.vocab, kQuestion, Subgraph{topics, g.triples()});
  p.activate(std::nullopt);
  EXPECT_EQ(full.answer, r1.answer);

  auto cap = infer(p, g, f.vocab, kQuestion, topics, RetrievalConfig{10, 3, 1});
  EXPECT_TRUE(cap.topic_only);
  EXPECT_EQ(cap.answer, "A");

  ModelParameters bare = f.model();
  EXPECT_THROW(infer(bare, g, f.vocab, kQuestion, topics, RetrievalConfig{}), std::logic_error);
}
