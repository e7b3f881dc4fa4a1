#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"
#include "kgr/head.hpp"
#include "kgr/optim.hpp"

using namespace kgr;

namespace {

AnswerScores from_probs(std::vector<double> p) {
  std::vector<double> logits;
  std::vector<std::uint32_t> pos;
  for (std::size_t i = 0; i < p.size(); ++i) {
    logits.push_back(std::log(std::max(p[i], 1e-300)));
    pos.push_back(static_cast<std::uint32_t>(i));
  }
  return scores_from_logits(pos, logits);
}

TargetDistribution target(std::vector<double> p) {
  TargetDistribution t;
  for (std::size_t i = 0; i < p.size(); ++i) t.positions.push_back(static_cast<std::uint32_t>(i));
  t.probs = std::move(p);
  return t;
}

}  // namespace

TEST(Head, ScoreEntities) {
  Mat h = Mat::Zero(5, 2);
  h(1, 0) = std::log(3.0);
  Mat w(2, 1);
  w << 1.0, 0.0;
  std::vector<std::uint32_t> one{3};
  auto s1 = score_entities(h, one, w, 0.0);
  EXPECT_DOUBLE_EQ(s1.probs[0], 1.0);

  std::vector<std::uint32_t> four{0, 2, 3, 4};
  for (double p : score_entities(h, four, w, 0.5).probs) EXPECT_DOUBLE_EQ(p, 0.25);

  std::vector<std::uint32_t> two{1, 2};
  auto s2 = score_entities(h, two, w, 0.0);
  EXPECT_NEAR(s2.probs[0], 0.75, 1e-15);
  EXPECT_NEAR(s2.probs[1], 0.25, 1e-15);

  EXPECT_THROW(score_entities(h, std::vector<std::uint32_t>{}, w, 0.0), std::invalid_argument);
}

TEST(Head, ShiftInvariance) {
  auto a = scores_from_logits({0, 1, 2}, {0.3, -1.0, 2.0});
  auto b = scores_from_logits({0, 1, 2}, {100.3, 99.0, 102.0});
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.probs[i], b.probs[i], 1e-12);
}

TEST(Head, BuildTarget) {
  auto g = fx::tiny_graph();
  auto s = serialize_subgraph(Subgraph{{g.entity("A")}, g.triples()});  // A r B s D C
  std::vector<EntityId> one{g.entity("C")};
  auto t1 = build_target(one, s, 2);
  ASSERT_TRUE(t1);
  EXPECT_EQ(t1->positions, (std::vector<std::uint32_t>{2, 4, 6, 7}));
  EXPECT_EQ(t1->probs, (std::vector<double>{0, 0, 0, 1}));
  std::vector<EntityId> two{g.entity("C"), g.entity("D")};
  EXPECT_EQ(build_target(two, s, 2)->probs, (std::vector<double>{0, 0, 0.5, 0.5}));
  auto s3 = truncate(s, 3);
  EXPECT_FALSE(build_target(one, s3, 2));
}

TEST(Head, KlLossExamples) {
  EXPECT_NEAR(kl_loss(target({0.5, 0.5}), from_probs({0.5, 0.5})), 0.0, 1e-15);
  EXPECT_NEAR(kl_loss(target({1.0, 0.0}), from_probs({0.5, 0.5})), std::log(2.0), 1e-12);
  EXPECT_THROW(kl_loss(target({0.7, 0.7}), from_probs({0.5, 0.5})), std::invalid_argument);
  EXPECT_THROW(kl_loss(target({1.0}), from_probs({0.5, 0.5})), std::invalid_argument);
  // floor keeps the loss finite
  EXPECT_TRUE(std::isfinite(kl_loss(target({1.0, 0.0}), scores_from_logits({0, 1}, {-1000.0, 0.0}))));
}

TEST(Head, KlLossGradientIsPMinusT) {
  auto t = target({0.0, 0.5, 0.5});
  std::vector<double> logits{0.2, -0.4, 1.1};
  auto p = scores_from_logits({0, 1, 2}, logits);
  auto grad = kl_loss_grad_logits(t, p);
  for (int i = 0; i < 3; ++i) {
    auto up = logits, dn = logits;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    double num = (kl_loss(t, scores_from_logits({0, 1, 2}, up)) - kl_loss(t, scores_from_logits({0, 1, 2}, dn))) / 2e-6;
    EXPECT_NEAR(grad[i], num, 1e-8);
    EXPECT_NEAR(grad[i], p.probs[i] - t.probs[i], 1e-15);
  }
}

TEST(Head, HitsAtOne) {
  auto s = scores_from_logits({3, 5, 7}, {0.1, 2.0, 0.3});
  EXPECT_EQ(hits_at_1(s, std::vector<std::uint32_t>{5}), 1);
  EXPECT_EQ(hits_at_1(s, std::vector<std::uint32_t>{3, 7}), 0);
  auto tie = scores_from_logits({3, 5}, {1.0, 1.0});
  EXPECT_EQ(hits_at_1(tie, std::vector<std::uint32_t>{3}), 1);
  EXPECT_EQ(hits_at_1(tie, std::vector<std::uint32_t>{5}), 0);
  // invariant under a strictly monotone transform of the logits
  auto cubed = scores_from_logits({3, 5, 7}, {0.001, 8.0, 0.027});
  EXPECT_EQ(cubed.argmax(), s.argmax());
}

TEST(Head, F1) {
  auto s = scores_from_logits({2, 3, 4}, {1.0, 1.0, -5.0});  // predicted {2,3} at tau 0.5
  auto r = f1_score(s, std::vector<std::uint32_t>{2}, 1, 0.5);
  EXPECT_DOUBLE_EQ(r.precision, 0.5);
  EXPECT_DOUBLE_EQ(r.recall, 1.0);
  EXPECT_NEAR(r.f1, 2.0 / 3.0, 1e-12);
  auto exact = f1_score(s, std::vector<std::uint32_t>{2, 3}, 2, 0.5);
  EXPECT_DOUBLE_EQ(exact.f1, 1.0);
  // tau = 1 keeps only the maximum, never an empty set
  auto strict = f1_score(scores_from_logits({0, 1}, {0.0, 3.0}), std::vector<std::uint32_t>{0}, 1, 1.0);
  EXPECT_DOUBLE_EQ(strict.precision, 0.0);
  EXPECT_DOUBLE_EQ(strict.f1, 0.0);
  // gold answers missing from the graph lower recall
  auto partial = f1_score(s, std::vector<std::uint32_t>{2, 3}, 4, 0.5);
  EXPECT_DOUBLE_EQ(partial.recall, 0.5);
}

TEST(Head, KlPropertiesOnRandomPairs) {
  Rng rng(9);
  std::gamma_distribution<double> gam(0.5, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    int n = 1 + trial % 7;
    std::vector<double> t(n), p(n);
    double st = 0, sp = 0;
    for (int i = 0; i < n; ++i) {
      t[i] = gam(rng);
      p[i] = gam(rng) + 1e-3;
      st += t[i];
      sp += p[i];
    }
    for (int i = 0; i < n; ++i) {
      t[i] /= st;
      p[i] /= sp;
    }
    EXPECT_GE(kl_loss(target(t), from_probs(p)), 0.0);
    EXPECT_NEAR(kl_loss(target(p), from_probs(p)), 0.0, 1e-12);
  }
}

TEST(Optim, ClipGlobalNorm) {
  auto v = fx::tiny_vocabulary();
  auto p = ModelParameters::init(fx::small_config(static_cast<int>(v.size())));
  GradientSet g(p);
  g[0].setConstant(1.0);
  double before = std::sqrt(g.squared_norm());
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), before);
  EXPECT_NEAR(std::sqrt(g.squared_norm()), 1.0, 1e-12);
  g.scale(0.5);
  clip_global_norm(g, 1.0);
  EXPECT_NEAR(std::sqrt(g.squared_norm()), 0.5, 1e-12);
}

TEST(Optim, AdamWFirstStepAndDecay) {
  auto v = fx::tiny_vocabulary();
  auto p = ModelParameters::init(fx::small_config(static_cast<int>(v.size())));
  const auto wi = p.index("layer0.attn.wq");
  const auto bi = p.index("layer0.attn.bq");
  Mat w0 = p.tensors()[wi].value;
  GradientSet g(p);
  g[wi].setConstant(3.0);
  g[bi].setConstant(-2.0);
  AdamW opt({0.1, 0.9, 0.999, 1e-8, 0.01});
  opt.step(p, g);
  // first Adam step moves by lr * sign(g); decay is lr * wd * w on matrices only
  Mat expect = w0 - 0.1 * 0.01 * w0 - Mat::Constant(w0.rows(), w0.cols(), 0.1);
  EXPECT_TRUE(p.tensors()[wi].value.isApprox(expect, 1e-6));
  EXPECT_TRUE((p.tensors()[bi].value.array() - 0.1).abs().maxCoeff() < 1e-6);
}

TEST(Head, TargetSumsToExactlyOne) {
  KnowledgeGraph g;
  std::vector<Triple> ts;
  auto hub = g.add_entity("hub");
  auto r = g.add_relation("r");
  std::vector<EntityId> leaves;
  for (int i = 0; i < 120; ++i) {
    leaves.push_back(g.add_entity("x" + std::to_string(i)));
    ts.push_back({hub, r, leaves.back()});
  }
  auto s = serialize_subgraph(Subgraph{{hub}, ts});
  for (std::size_t n = 1; n <= leaves.size(); ++n) {
    auto t = build_target(std::span(leaves.data(), n), s, 3);
    ASSERT_TRUE(t);
    double sum = 0.0;
    for (double p : t->probs) sum += p;
    EXPECT_EQ(sum, 1.0) << n;
    for (double p : t->probs) EXPECT_TRUE(p == 0.0 || std::abs(p - 1.0 / static_cast<double>(n)) < 1e-13);
  }
}
