#include "dmsa/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "dmsa/tape.hpp"

namespace dmsa {

Tensor numeric_gradient(const ScalarFn& f, const Tensor& x, double eps) {
  std::vector<double> probe(x.data().begin(), x.data().end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(x.with_data(probe)).item();
    probe[i] = orig - eps;
    const double down = f(x.with_data(probe)).item();
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return x.with_data(std::move(grad));
}

double grad_check(const ScalarFn& f, const Tensor& x, double eps) {
  Tensor analytic;
  {
    GradTape tape;
    GradTape::Scope scope(tape);
    Tensor leaf = x.detach().requires_grad(true);
    Tensor loss = f(leaf);
    analytic = tape.backward(loss).get(leaf);
  }
  Tensor numeric = numeric_gradient(f, x.detach(), eps);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double err = std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(numeric[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dmsa
