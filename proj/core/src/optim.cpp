#include "kgr/optim.hpp"

#include <cmath>

namespace kgr {

void AdamW::step(ModelParameters& params, const GradientSet& grads) {
  auto& tensors = params.tensors();
  if (m_.size() != tensors.size()) {
    m_.resize(tensors.size());
    v_.resize(tensors.size());
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!grads.has(i) || !tensors[i].trainable) continue;
    auto& w = tensors[i].value;
    const auto& g = grads[i];
    if (m_[i].size() == 0) {
      m_[i] = Mat::Zero(w.rows(), w.cols());
      v_[i] = Mat::Zero(w.rows(), w.cols());
    }
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    if (cfg_.weight_decay > 0.0 && w.rows() > 1) w *= 1.0 - cfg_.lr * cfg_.weight_decay;
    w.array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

double clip_global_norm(GradientSet& grads, double max_norm) {
  double norm = std::sqrt(grads.squared_norm());
  if (max_norm > 0.0 && norm > max_norm) grads.scale(max_norm / norm);
  return norm;
}

}  // namespace kgr
