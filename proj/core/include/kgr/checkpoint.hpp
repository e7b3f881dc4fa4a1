#pragma once
// Checkpoint container:
//
//   "KGRCKPT1\n"
//   u64 little-endian header length, JSON header (config, vocabulary and its
//   hash, adapter sets, active adapter, tensor table with shapes and
//   trainable flags)
//   raw little-endian doubles for every tensor in table order

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "kgr/encoder.hpp"
#include "kgr/sequencer.hpp"

namespace kgr {

struct Checkpoint {
  ModelParameters params;
  Vocabulary vocab;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const ModelParameters& params, const Vocabulary& vocab);

// Verifies the magic, every tensor shape against the layout implied by the
// stored config, and the vocabulary hash (and `expected_vocab_hash` if given).
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::optional<std::uint64_t> expected_vocab_hash = std::nullopt);

// FNV-1a over the file bytes.
std::uint64_t file_hash(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace kgr
