#pragma once

#include <string>
#include <vector>

#include "mdet/autodiff.hpp"

namespace mdet {

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global L2 gradient norm cap; <= 0 disables clipping.
  double clip_norm = 0.0;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  // Applies one update from the gradients stored in `params`. Throws
  // std::domain_error naming the parameter if any gradient is not finite.
  void step(ParamStore& params);

  const OptimizerConfig& config() const { return config_; }
  long steps() const { return t_; }

 private:
  OptimizerConfig config_;
  long t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace mdet
