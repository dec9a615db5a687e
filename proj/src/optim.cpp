#include "mdet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace mdet {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

void Optimizer::step(ParamStore& params) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter& p = params[i];
    for (double g : p.grad.data) {
      if (!std::isfinite(g)) throw std::domain_error("non-finite gradient for parameter " + p.name);
      sq += g * g;
    }
  }
  double factor = 1.0;
  if (config_.clip_norm > 0.0) {
    const double norm = std::sqrt(sq);
    if (norm > config_.clip_norm) factor = config_.clip_norm / norm;
  }

  ++t_;
  if (config_.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = params[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) p.value[k] -= config_.lr * factor * p.grad[k];
    }
    return;
  }

  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].value.shape);
      v_.emplace_back(params[i].value.shape);
    }
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter& p = params[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = factor * p.grad[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p.value[k] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace mdet
