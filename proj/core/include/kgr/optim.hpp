#pragma once

#include <vector>

#include "kgr/encoder.hpp"

namespace kgr {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Adam with decoupled weight decay. Decay skips 1-row tensors (biases and
// layer-norm parameters). Only tensors present in the gradient set move.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}
  void step(ModelParameters& params, const GradientSet& grads);
  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

// Rescales so the global L2 norm is at most max_norm; returns the norm before
// clipping.
double clip_global_norm(GradientSet& grads, double max_norm);

}  // namespace kgr
