#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ifield/autodiff.hpp"

namespace ifield::ad {

struct GradcheckReport {
  double max_rel_err = 0.0;
  bool pass = false;
  std::size_t evaluated = 0;
  // Location of the worst element: input index and flat element index.
  std::size_t worst_input = 0;
  std::size_t worst_element = 0;
  std::string diagnostic;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

using MultiFunction = std::function<Var(const std::vector<Var>&)>;

// Compares reverse-mode gradients of f at xs against central differences.
inline GradcheckReport gradcheck(const MultiFunction& f, const std::vector<Tensor>& xs,
                                 double step = 1e-5, double tol = 1e-4) {
  GradcheckReport report;
  if (!(step > 0.0)) {
    report.diagnostic = "step must be positive";
    return report;
  }

  std::vector<Var> leaves;
  leaves.reserve(xs.size());
  for (const auto& x : xs) leaves.emplace_back(x, true);
  Var y = f(leaves);
  if (!y.value().is_scalar()) {
    report.diagnostic = "function output is not scalar: " + y.value().shape_string();
    return report;
  }
  if (!std::isfinite(y.item())) {
    report.diagnostic = "non-finite function value at the base point";
    return report;
  }
  const GradientMap grads = backward(y);

  auto evaluate = [&](std::size_t which, std::size_t element, double delta) {
    std::vector<Var> consts;
    consts.reserve(xs.size());
    for (std::size_t k = 0; k < xs.size(); ++k) {
      Tensor t = xs[k];
      if (k == which) t[element] += delta;
      consts.emplace_back(std::move(t), false);
    }
    return f(consts).item();
  };

  for (std::size_t k = 0; k < xs.size(); ++k) {
    const Tensor zero(xs[k].rows(), xs[k].cols());
    const Tensor& analytic = grads.contains(leaves[k]) ? grads.at(leaves[k]) : zero;
    for (std::size_t e = 0; e < xs[k].size(); ++e) {
      const double fp = evaluate(k, e, step);
      const double fm = evaluate(k, e, -step);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        std::ostringstream os;
        os << "non-finite function value while perturbing input " << k << " element " << e;
        report.diagnostic = os.str();
        report.pass = false;
        return report;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[e];
      if (!std::isfinite(a)) {
        std::ostringstream os;
        os << "non-finite analytic gradient at input " << k << " element " << e;
        report.diagnostic = os.str();
        report.pass = false;
        return report;
      }
      const double err = relative_error(a, numeric);
      ++report.evaluated;
      if (err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_input = k;
        report.worst_element = e;
      }
    }
  }
  report.pass = report.max_rel_err <= tol;
  if (!report.pass) {
    std::ostringstream os;
    os << "max relative error " << report.max_rel_err << " exceeds tolerance " << tol
       << " at input " << report.worst_input << " element " << report.worst_element;
    report.diagnostic = os.str();
  }
  return report;
}

inline GradcheckReport gradcheck(const std::function<Var(const Var&)>& f, const Tensor& x,
                                 double step = 1e-5, double tol = 1e-4) {
  return gradcheck([&](const std::vector<Var>& v) { return f(v[0]); }, std::vector<Tensor>{x}, step, tol);
}

}  // namespace ifield::ad
