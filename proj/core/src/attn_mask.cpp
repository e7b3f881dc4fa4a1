#include "kgr/attn_mask.hpp"

#include <ostream>
#include <sstream>
#include <stdexcept>

namespace kgr {

AttentionMask build_mask(std::size_t question_length, const SerializedSubgraph& graph, MaskOptions options) {
  if (question_length == 0) throw std::invalid_argument("build_mask: question length must be >= 1");
  const std::size_t nq = question_length;
  const std::size_t l = nq + graph.tokens.size();

  AttentionMask m;
  m.question_length = nq;
  m.values = Mat::Constant(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(l), kNegInf);
  m.values.leftCols(static_cast<Eigen::Index>(nq)).setZero();  // modes A and B

  const auto ng = static_cast<Eigen::Index>(graph.tokens.size());
  auto block = m.values.bottomRightCorner(ng, ng);
  if (!options.structural) {
    block.setZero();
  } else {
    block.diagonal().setZero();
  }
  for (auto [i, j] : graph.adjacency) {
    if (i >= graph.tokens.size() || j >= graph.tokens.size() || i == j)
      throw std::invalid_argument("build_mask: adjacency pair (" + std::to_string(i) + "," +
                                  std::to_string(j) + ") out of range");
    block(i, j) = 0.0;
    block(j, i) = 0.0;
  }
  return m;
}

AttentionMask pad_mask(const AttentionMask& m, std::size_t extra) {
  const auto l = static_cast<Eigen::Index>(m.size());
  const auto n = l + static_cast<Eigen::Index>(extra);
  AttentionMask out;
  out.question_length = m.question_length;
  out.values = Mat::Constant(n, n, kNegInf);
  out.values.topLeftCorner(l, l) = m.values;
  for (Eigen::Index i = l; i < n; ++i) out.values(i, i) = 0.0;
  return out;
}

void dump(std::ostream& os, const AttentionMask& m) {
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) os << (m.values(i, j) == 0.0 ? '1' : '.');
    os << '\n';
  }
}

std::string dump(const AttentionMask& m) {
  std::ostringstream os;
  dump(os, m);
  return os.str();
}

}  // namespace kgr
