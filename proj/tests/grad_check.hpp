#pragma once

// Central finite-difference oracle shared by the gradient tests.

#include <algorithm>
#include <cmath>
#include <vector>

#include "acetone/autodiff.hpp"

// Builds the scalar loss from graph vars bound to each parameter, compares
// the backward gradient with (f(p+h) - f(p-h)) / 2h for every element and
// returns the largest relative error |a - n| / max(1e-6, |a| + |n|).
template <typename Build>
double max_relative_grad_error(std::vector<acetone::ad::Parameter<double>>& params, Build build,
                               double h = 1e-4) {
  using namespace acetone::ad;
  auto evaluate = [&](bool with_grad) {
    Graph<double> g;
    std::vector<Var> vars;
    for (auto& p : params) vars.push_back(g.param(p));
    Var loss = build(g, vars);
    if (with_grad) g.backward(loss);
    return g.value(loss).data[0];
  };
  for (auto& p : params) p.zero_grad();
  evaluate(true);
  double worst = 0.0;
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double saved = p.value.data[i];
      p.value.data[i] = saved + h;
      const double up = evaluate(false);
      p.value.data[i] = saved - h;
      const double down = evaluate(false);
      p.value.data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p.grad.data[i];
      const double err = std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
      worst = std::max(worst, err);
    }
  }
  return worst;
}
