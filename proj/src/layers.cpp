#include "mmssl/layers.hpp"

#include <cmath>

namespace mmssl {

Var Binder::operator()(const Parameter& p) {
  auto it = bound_.find(&p);
  if (it != bound_.end()) return it->second;
  Var v = graph_.leaf(p.value, !p.frozen);
  bound_.emplace(&p, v);
  order_.push_back(&p);
  return v;
}

void Binder::link(const Parameter& p, const Var& v) {
  if (!bound_.emplace(&p, v).second) throw ContractError("parameter is already bound");
  order_.push_back(&p);
}

std::vector<std::pair<const Parameter*, Tensor>> Binder::gradients(const Gradients& grads) const {
  std::vector<std::pair<const Parameter*, Tensor>> out;
  for (const Parameter* p : order_) {
    const Var& v = bound_.at(p);
    if (grads.contains(v)) out.emplace_back(p, grads[v]);
  }
  return out;
}

void xavier_uniform(Tensor& weight, Index fan_in, Index fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& w : weight.data()) w = dist(rng);
}

Linear::Linear(Index in, Index out, bool bias)
    : weight{Tensor::zeros({in, out})}, bias{Tensor::zeros({out})}, in_(in), out_(out), has_bias_(bias) {}

Var Linear::operator()(Binder& bind, const Var& x) const {
  if (x.rank() != 2 || x.cols() != in_) {
    throw DimensionError("linear: expected [n x " + std::to_string(in_) + "] input, got " + shape_string(x.shape()));
  }
  Var y = matmul(x, bind(weight));
  return has_bias_ ? add_row_vector(y, bind(bias)) : y;
}

void Linear::init(Rng& rng) {
  xavier_uniform(weight.value, in_, out_, rng);
  bias.value.matrix().setZero();
}

void Linear::visit(const std::string& prefix, const ParameterVisitor& f) {
  f(prefix + ".weight", weight);
  if (has_bias_) f(prefix + ".bias", bias);
}

void Linear::visit(const std::string& prefix, const ConstParameterVisitor& f) const {
  f(prefix + ".weight", weight);
  if (has_bias_) f(prefix + ".bias", bias);
}

}  // namespace mmssl
