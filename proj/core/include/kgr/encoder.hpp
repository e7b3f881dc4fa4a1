#pragma once
// Post-norm Transformer encoder with masked multi-head self-attention,
// optional bottleneck adapters, and hand-written reverse-mode gradients.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "kgr/attn_mask.hpp"
#include "kgr/sequencer.hpp"
#include "kgr/tensor.hpp"

namespace kgr {

struct ModelConfig {
  int layers = 2;
  int d = 64;
  int heads = 4;
  int d_ff = 256;
  int max_len = 512;
  int vocab_size = 0;
  int adapter_width = 8;
  double dropout = 0.1;
  std::uint64_t seed = 17;
  bool separate_graph_positions = false;

  // Throws std::invalid_argument on non-positive dims or d % heads != 0.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Tensor {
  std::string name;
  Mat value;
  bool trainable = true;
};

enum class TrainPolicy { Full, AdaptersAndHeadOnly };

struct ParamCounts {
  std::size_t total = 0;
  std::size_t trainable = 0;
  double fraction() const { return total == 0 ? 0.0 : static_cast<double>(trainable) / static_cast<double>(total); }
};

class ModelParameters {
 public:
  // Indices into tensors() for one encoder block.
  struct Layer {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1_g, ln1_b;
    std::size_t w1, b1, w2, b2;
    std::size_t ln2_g, ln2_b;
  };
  struct Adapter {
    std::size_t down, down_b, up, up_b;
  };
  // A named task adapter: two bottlenecks per block and its own scoring head.
  struct AdapterSet {
    std::vector<Adapter> attn;
    std::vector<Adapter> ffn;
    std::size_t head_w, head_b;
  };

  ModelParameters() = default;
  // Random init from config.seed: N(0, 0.02) weights, zero biases, unit norms.
  static ModelParameters init(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  Tensor& at(const std::string& name) { return tensors_[index(name)]; }
  const Tensor& at(const std::string& name) const { return tensors_[index(name)]; }
  std::size_t index(const std::string& name) const;
  bool has(const std::string& name) const { return names_.count(name) != 0; }

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t embedding() const { return embedding_; }
  std::size_t positions() const { return positions_; }
  std::optional<std::size_t> graph_positions() const { return graph_positions_; }

  // Adds zero-output adapters (up-projection initialised to 0) and a head
  // copied from the base head. Seeded from config.seed and the set name.
  void add_adapter_set(const std::string& name);
  bool has_adapter_set(const std::string& name) const { return adapters_.count(name) != 0; }
  std::vector<std::string> adapter_sets() const;
  const AdapterSet& adapter_set(const std::string& name) const;
  // nullopt runs the bare encoder with the base head.
  void activate(std::optional<std::string> name);
  const std::optional<std::string>& active() const { return active_; }
  const AdapterSet* active_set() const;
  std::size_t head_w() const;
  std::size_t head_b() const;

  // Full: everything trainable. AdaptersAndHeadOnly: only the active adapter
  // set (blocks + head). Throws std::logic_error if no adapter set is active.
  ParamCounts set_trainable(TrainPolicy policy);
  ParamCounts counts() const;

  std::uint64_t hash() const;
  // Hash of every tensor outside all adapter sets (base weights and head).
  std::uint64_t base_hash() const;

 private:
  std::size_t add(std::string name, Mat value);

  ModelConfig config_;
  std::vector<Tensor> tensors_;
  std::map<std::string, std::size_t> names_;
  std::vector<Layer> layers_;
  std::size_t embedding_ = 0, positions_ = 0;
  std::optional<std::size_t> graph_positions_;
  std::size_t head_w_ = 0, head_b_ = 0;
  std::map<std::string, AdapterSet> adapters_;
  std::optional<std::string> active_;

};

// Per-tensor gradients; frozen tensors carry no entry.
class GradientSet {
 public:
  GradientSet() = default;
  explicit GradientSet(const ModelParameters& params);

  bool has(std::size_t i) const { return i < grads_.size() && grads_[i].has_value(); }
  Mat& operator[](std::size_t i);
  const Mat& operator[](std::size_t i) const;
  std::size_t size() const { return grads_.size(); }
  void zero();
  void scale(double s);
  double squared_norm() const;
  void add(const GradientSet& other);

 private:
  std::vector<std::optional<Mat>> grads_;
};

// Sum of the embedding rows of `ids`.
RowVec embed_node(std::span<const TokenId> ids, const Mat& table);

// N + E for the given input under the current parameters.
Mat embed_input(const InputSequence& in, const ModelParameters& params);

struct AttentionWeights {
  const Mat& wq;
  const Mat& bq;
  const Mat& wk;
  const Mat& bk;
  const Mat& wv;
  const Mat& bv;
  const Mat& wo;
  const Mat& bo;
};

// Multi-head softmax(QK^T / sqrt(d_head) + M) V followed by the output
// projection. Throws std::invalid_argument on shape mismatch.
Mat masked_attention(const Mat& x, const AttentionMask& mask, const AttentionWeights& w, int heads);
// Row-softmax attention probabilities of a single head, for inspection.
Mat attention_probabilities(const Mat& x, const AttentionMask& mask, const AttentionWeights& w, int heads,
                            int head);

enum class Mode { Train, Eval };

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One forward pass with the activations needed for backward().
class EncoderPass {
 public:
  explicit EncoderPass(const ModelParameters& params);
  ~EncoderPass();
  EncoderPass(EncoderPass&&) noexcept;
  EncoderPass& operator=(EncoderPass&&) = delete;

  // `rng` drives dropout and is required in Train mode when dropout > 0.
  // Throws NonFiniteError naming the first block whose output is not finite.
  const Mat& forward(const InputSequence& in, Mode mode, Rng* rng = nullptr);
  const Mat& hidden() const;
  // Output of embedding (index 0) and of every block.
  const std::vector<Mat>& layer_outputs() const;

  // Accumulates dL/dtheta into `grads` given dL/dH. Throws std::logic_error
  // when called before forward().
  void backward(const Mat& d_hidden, GradientSet& grads) const;

 private:
  struct Cache;
  const ModelParameters* params_;
  std::unique_ptr<Cache> cache_;
};

}  // namespace kgr
