#include <gtest/gtest.h>

#include <filesystem>

#include "fixtures.hpp"
#include "kgr/encoder.hpp"
#include "kgr/sequencer.hpp"

using namespace kgr;

namespace {

Vocabulary tiny_vocab() {
  std::vector<std::string> corpus{"who is the r of A?", "what is the s of the r of A?", "A B C D r s new york"};
  return Vocabulary::build(corpus);
}

}  // namespace

TEST(Sequencer, SplitWords) {
  EXPECT_EQ(split_words("who is the r of A?"), (std::vector<std::string>{"who", "is", "the", "r", "of", "a", "?"}));
  EXPECT_TRUE(split_words("").empty());
  EXPECT_EQ(split_words("  New-York,  x "), (std::vector<std::string>{"new", "-", "york", ",", "x"}));
}

TEST(Sequencer, VocabularyReservedIdsAndUnknowns) {
  auto v = tiny_vocab();
  EXPECT_EQ(v.token(Vocabulary::kPad), "[PAD]");
  EXPECT_EQ(v.token(Vocabulary::kUnk), "[UNK]");
  auto ids = v.tokenize("who is the r of A?");
  ASSERT_EQ(ids.size(), 7u);
  EXPECT_EQ(v.token(ids[5]), "a");
  EXPECT_EQ(v.tokenize("zebra"), (std::vector<TokenId>{Vocabulary::kUnk}));
  EXPECT_TRUE(v.tokenize("").empty());
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(v.id(v.token(static_cast<TokenId>(i))), static_cast<TokenId>(i));
}

TEST(Sequencer, VocabularyFileRoundTrip) {
  auto v = tiny_vocab();
  auto path = std::filesystem::temp_directory_path() / "kgr-test-vocab.txt";
  v.save(path);
  auto w = Vocabulary::load(path);
  EXPECT_EQ(w.tokens(), v.tokens());
  EXPECT_EQ(w.hash(), v.hash());
}

TEST(Sequencer, NodeEmbeddingIsSubwordSum) {
  KnowledgeGraph g;
  auto ny = g.add_entity("new york");
  auto ny2 = g.add_entity("New York");
  auto r = g.add_relation("r");
  auto empty = g.add_entity("");
  auto v = tiny_vocab();
  Mat table = Mat::Random(static_cast<Eigen::Index>(v.size()), 4);
  auto ids = node_subwords(NodeToken::entity(ny), g, v);
  RowVec sum = embed_node(ids, table);
  RowVec expect = table.row(v.id("new")) + table.row(v.id("york"));
  EXPECT_TRUE(sum.isApprox(expect));
  EXPECT_EQ(embed_node(node_subwords(NodeToken::relation(r), g, v), table), RowVec(table.row(v.id("r"))));
  EXPECT_EQ(embed_node(node_subwords(NodeToken::entity(ny2), g, v), table), sum);
  EXPECT_EQ(embed_node(node_subwords(NodeToken::entity(empty), g, v), table), RowVec(table.row(Vocabulary::kUnk)));
}

TEST(Sequencer, AssembleTinyFixture) {
  auto g = fx::tiny_graph();
  auto v = tiny_vocab();
  auto s = serialize_subgraph(Subgraph{{g.entity("A")}, g.triples()});
  auto in = assemble_input("r A", s, g, v, {});
  EXPECT_EQ(in.length(), 8u);
  EXPECT_EQ(in.entity_positions, (std::vector<std::uint32_t>{2, 4, 6, 7}));
  EXPECT_EQ(in.mask.size(), 8u);
  for (std::size_t i = 0; i < in.length(); ++i) EXPECT_EQ(in.row_positions[i], static_cast<std::int32_t>(i));

  // question, entity and relation positions partition 0..l-1
  std::vector<int> kind(in.length(), 0);
  for (std::size_t i = 0; i < in.question_length(); ++i) kind[i] += 1;
  for (auto p : in.entity_positions) kind[p] += 1;
  for (std::size_t i = 0; i < s.tokens.size(); ++i)
    if (!s.tokens[i].is_entity()) kind[in.question_length() + i] += 1;
  for (int k : kind) EXPECT_EQ(k, 1);
}

TEST(Sequencer, TruncatesGraphToMaxLen) {
  auto g = fx::tiny_graph();
  auto v = tiny_vocab();
  auto s = serialize_subgraph(Subgraph{{g.entity("A")}, g.triples()});
  auto in = assemble_input("r A", s, g, v, InputOptions{5, true});
  EXPECT_EQ(in.length(), 5u);
  EXPECT_EQ(in.graph.tokens.size(), 3u);
  EXPECT_EQ(in.entity_positions, (std::vector<std::uint32_t>{2, 4}));
}

TEST(Sequencer, Errors) {
  auto g = fx::tiny_graph();
  auto v = tiny_vocab();
  auto s = serialize_subgraph(Subgraph{{g.entity("A")}, g.triples()});
  EXPECT_THROW(assemble_input("", s, g, v, {}), std::invalid_argument);
  EXPECT_THROW(assemble_input("  ", s, g, v, {}), std::invalid_argument);
  EXPECT_THROW(assemble_input("r A", s, g, v, InputOptions{2, true}), std::invalid_argument);
}

TEST(Sequencer, QuestionRowsOfEmbeddingIgnoreGraph) {
  auto g = fx::tiny_graph();
  auto v = tiny_vocab();
  auto p = ModelParameters::init(fx::small_config(static_cast<int>(v.size())));
  auto s1 = serialize_subgraph(Subgraph{{g.entity("A")}, g.triples()});
  auto s2 = serialize_subgraph(Subgraph{{g.entity("C")}, {g.triples()[1]}});
  auto e1 = embed_input(assemble_input("who is the r of A?", s1, g, v, {}), p);
  auto e2 = embed_input(assemble_input("who is the r of A?", s2, g, v, {}), p);
  EXPECT_EQ(e1.topRows(7), e2.topRows(7));
  EXPECT_EQ(e1, embed_input(assemble_input("who is the r of A?", s1, g, v, {}), p));
}

TEST(Sequencer, PadInput) {
  auto g = fx::tiny_graph();
  auto v = tiny_vocab();
  auto s = serialize_subgraph(Subgraph{{g.entity("A")}, g.triples()});
  auto in = assemble_input("r A", s, g, v, {});
  auto padded = pad_input(in, 11);
  EXPECT_EQ(padded.length(), 11u);
  EXPECT_EQ(padded.entity_positions, in.entity_positions);
  EXPECT_EQ(padded.row_segments[10], Segment::Pad);
  EXPECT_EQ(padded.mask.size(), 11u);
}
