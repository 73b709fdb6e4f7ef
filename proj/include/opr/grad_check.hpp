#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace opr {

/// Compares reverse-mode gradients of the scalar `f()` with central finite
/// differences over every entry of `params`. Returns the maximum of
/// |analytic - fd| / max(1, |fd|). Parameter gradients are zeroed on exit.
template <class F>
double grad_check(F&& f, std::span<Tensor> params, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
    p.zero_grad();
  }
  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto x = params[k].mutable_values();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + h;
      const double up = f().item();
      x[i] = saved - h;
      const double down = f().item();
      x[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(analytic[k][i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

}  // namespace opr
