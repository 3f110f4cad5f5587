#include <algorithm>
#include <cmath>

#include "tssl/autodiff.hpp"
#include "tssl/error.hpp"

namespace tssl::ad {

GradCheckReport grad_check(const GraphBuilder& fn, const std::vector<Tensor>& params, double step,
                           double rtol, double abs_floor) {
  if (!(step > 0.0)) throw DomainError("grad_check: step must be positive");

  // Analytic pass; also captures the stop-gradient values at the base point.
  std::vector<Tensor> analytic;
  std::vector<Tensor> frozen;
  {
    Graph g;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (const Tensor& p : params) vars.push_back(g.parameter(p));
    const Var loss = fn(g, vars);
    const GradientMap grads = g.backward(loss);
    for (const Var& v : vars) analytic.push_back(grads[v]);
    frozen = g.stop_gradient_values();
  }

  auto evaluate = [&](const std::vector<Tensor>& point) {
    Graph g;
    g.freeze_stop_gradients(frozen);
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (const Tensor& p : point) vars.push_back(g.parameter(p));
    return fn(g, vars).value().item();
  };

  GradCheckReport report;
  report.max_rel_error.assign(params.size(), 0.0);
  std::vector<Tensor> point = params;
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k].size(); ++i) {
      const double base = point[k][i];
      point[k][i] = base + step;
      const double plus = evaluate(point);
      point[k][i] = base - step;
      const double minus = evaluate(point);
      point[k][i] = base;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      report.max_rel_error[k] = std::max(report.max_rel_error[k], std::abs(a - numeric) / denom);
    }
    report.worst = std::max(report.worst, report.max_rel_error[k]);
  }
  report.passed = report.worst < rtol;
  return report;
}

}  // namespace tssl::ad
