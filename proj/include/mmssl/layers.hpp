#pragma once

#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mmssl/autodiff.hpp"
#include "mmssl/rng.hpp"
#include "mmssl/tensor.hpp"

namespace mmssl {

/// A trainable tensor. Frozen parameters enter the graph as constants and are
/// skipped by the optimizer.
struct Parameter {
  Tensor value;
  bool frozen = false;
};

using ParameterVisitor = std::function<void(const std::string& name, Parameter& p)>;
using ConstParameterVisitor = std::function<void(const std::string& name, const Parameter& p)>;

/// Binds parameters into one graph as leaves, once per parameter.
class Binder {
 public:
  explicit Binder(Graph& graph) : graph_(graph) {}

  Var operator()(const Parameter& p);
  /// Uses `v` for every later binding of `p` (e.g. a leaf created elsewhere).
  void link(const Parameter& p, const Var& v);

  Graph& graph() const noexcept { return graph_; }

  /// Gradient per trainable bound parameter, in binding order.
  std::vector<std::pair<const Parameter*, Tensor>> gradients(const Gradients& grads) const;

 private:
  Graph& graph_;
  std::unordered_map<const Parameter*, Var> bound_;
  std::vector<const Parameter*> order_;
};

/// Samples uniform(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
void xavier_uniform(Tensor& weight, Index fan_in, Index fan_out, Rng& rng);

/// Affine map x W + b applied to every row of x.
class Linear {
 public:
  Linear() = default;
  Linear(Index in, Index out, bool bias = true);

  Var operator()(Binder& bind, const Var& x) const;

  /// Xavier-uniform weights, zero bias.
  void init(Rng& rng);

  Index in_features() const noexcept { return in_; }
  Index out_features() const noexcept { return out_; }

  void visit(const std::string& prefix, const ParameterVisitor& f);
  void visit(const std::string& prefix, const ConstParameterVisitor& f) const;

  Parameter weight;
  Parameter bias;

 private:
  Index in_ = 0;
  Index out_ = 0;
  bool has_bias_ = true;
};

}  // namespace mmssl
