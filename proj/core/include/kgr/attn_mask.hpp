#pragma once
// Additive self-attention mask over [question ; serialized subgraph].
//
//   question -> question   open
//   graph    -> question   open
//   graph    -> graph      open on the diagonal and between tokens that share
//                          a triple (or everywhere when structure is relaxed)
//   question -> graph      blocked
//
// Blocked cells hold kNegInf, a large finite negative value, so that softmax
// shifting never computes inf - inf.

#include <cstddef>
#include <iosfwd>
#include <string>

#include "kgr/serializer.hpp"
#include "kgr/tensor.hpp"

namespace kgr {

inline constexpr double kNegInf = -1e9;

struct AttentionMask {
  Mat values;  // l x l, entries in {0, kNegInf}
  std::size_t question_length = 0;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  bool open(std::size_t i, std::size_t j) const { return values(i, j) == 0.0; }
};

struct MaskOptions {
  // false relaxes the graph block to full attention (ablation).
  bool structural = true;
};

// Throws std::invalid_argument for question_length == 0 or adjacency that
// references positions outside the token list.
AttentionMask build_mask(std::size_t question_length, const SerializedSubgraph& graph,
                         MaskOptions options = {});

// Appends `extra` padding positions that attend only to themselves and are
// invisible to every other row.
AttentionMask pad_mask(const AttentionMask& m, std::size_t extra);

// One row per line, '1' for open cells and '.' for blocked ones.
void dump(std::ostream& os, const AttentionMask& m);
std::string dump(const AttentionMask& m);

}  // namespace kgr
