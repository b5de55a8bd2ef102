#pragma once

// Central finite-difference checks of reverse-mode gradients.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mmssl/autodiff.hpp"

namespace mmssl {

/// Builds a scalar output from leaves bound to the given inputs.
using ScalarFn = std::function<Var(Graph&, const std::vector<Var>&)>;

/// ||a - n|| / max(||a||, ||n||, 1e-8), Frobenius norms over the whole tensor.
double relative_error(const Tensor& analytic, const Tensor& numeric);

/// Largest relative error over all inputs between the tape gradient and the
/// central difference (f(x + h) - f(x - h)) / 2h, element by element.
double check_gradients(const ScalarFn& f, const std::vector<Tensor>& inputs, double step = 1e-5);

struct GradCheckCase {
  std::string op;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Every operation covered by run_gradcheck_suite, in report order.
std::vector<std::string> gradcheck_operations();

/// Each operation on `seeds` random inputs derived from `root_seed`.
std::vector<GradCheckCase> run_gradcheck_suite(std::size_t seeds, double tolerance, double step = 1e-5,
                                               std::uint64_t root_seed = 0);

}  // namespace mmssl
