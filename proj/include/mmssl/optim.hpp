#pragma once

#include <utility>
#include <vector>

#include "mmssl/layers.hpp"

namespace mmssl {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer over a fixed parameter list. Frozen parameters
/// are never written.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg);

  void step(const std::vector<std::pair<const Parameter*, Tensor>>& grads);

  std::size_t steps() const noexcept { return t_; }

 private:
  struct Slot {
    Parameter* param;
    Matrix m;
    Matrix v;
  };
  std::vector<Slot> slots_;
  AdamConfig cfg_;
  std::size_t t_ = 0;
};

}  // namespace mmssl
