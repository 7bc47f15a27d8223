#include <algorithm>
#include <cmath>

#include "berttune/autodiff.hpp"

namespace berttune::ad {

namespace {

double evaluate(const ScalarFunction& f, const Tensor& point, std::size_t index) {
  Graph g(/*record=*/false);
  const double v = f(g, point).item();
  if (!std::isfinite(v)) {
    throw GradCheckError("grad_check: non-finite function value when probing coordinate " +
                             std::to_string(index),
                         index);
  }
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& point, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  GradCheckResult result;
  Tensor x = point.clone(/*requires_grad=*/true);
  {
    Graph g;
    Tensor y = f(g, x);
    if (!std::isfinite(y.item())) {
      throw GradCheckError("grad_check: non-finite function value at the base point", 0);
    }
    g.backward(y);
  }
  result.analytic.assign(x.size(), 0.0);
  if (!x.grad().empty()) std::copy(x.grad().begin(), x.grad().end(), result.analytic.begin());

  Tensor probe = point.clone();
  auto pv = probe.mutable_values();
  result.numeric.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = pv[i];
    pv[i] = orig + step;
    const double up = evaluate(f, probe, i);
    pv[i] = orig - step;
    const double down = evaluate(f, probe, i);
    pv[i] = orig;
    result.numeric[i] = (up - down) / (2.0 * step);
    const double a = result.analytic[i];
    const double err = std::abs(a - result.numeric[i]) / std::max(1.0, std::abs(a));
    if (err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_index = i;
    }
  }
  return result;
}

}  // namespace berttune::ad
