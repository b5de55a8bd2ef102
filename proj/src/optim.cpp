#include "mmssl/optim.hpp"

#include <cmath>
#include <unordered_map>

namespace mmssl {

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg.learning_rate >= 0)) throw ConfigError("learning rate must be non-negative");
  slots_.reserve(params.size());
  for (Parameter* p : params) {
    slots_.push_back({p, Matrix::Zero(p->value.rows(), p->value.cols()), Matrix::Zero(p->value.rows(), p->value.cols())});
  }
}

void Adam::step(const std::vector<std::pair<const Parameter*, Tensor>>& grads) {
  std::unordered_map<const Parameter*, const Tensor*> lookup;
  for (const auto& [p, g] : grads) lookup.emplace(p, &g);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& slot : slots_) {
    if (slot.param->frozen) continue;
    auto it = lookup.find(slot.param);
    if (it == lookup.end()) continue;
    const Matrix& g = it->second->matrix();
    slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * g;
    slot.v = cfg_.beta2 * slot.v + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    slot.param->value.matrix().array() -=
        cfg_.learning_rate * (slot.m.array() / bc1) / ((slot.v.array() / bc2).sqrt() + cfg_.epsilon);
  }
}

}  // namespace mmssl
