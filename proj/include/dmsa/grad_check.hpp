#pragma once

#include <functional>

#include "dmsa/tensor.hpp"

namespace dmsa {

using ScalarFn = std::function<Tensor(const Tensor&)>;

/// Compares reverse-mode gradients of `f` at `x` with central differences.
/// Returns max_i |analytic_i - numeric_i| / max(1, |numeric_i|).
double grad_check(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

/// Central-difference gradient of `f` at `x`, evaluated with no tape.
Tensor numeric_gradient(const ScalarFn& f, const Tensor& x, double eps = 1e-5);

}  // namespace dmsa
