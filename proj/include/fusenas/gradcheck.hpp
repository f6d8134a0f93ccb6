#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "fusenas/parameter.hpp"
#include "fusenas/rng.hpp"
#include "fusenas/tape.hpp"

namespace fusenas {

// Central finite-difference check of a scalar-valued graph, always in double
// precision. The graph builder is re-run for every perturbed evaluation, so
// the numeric side never shares state with the analytic one.
class GradCheck {
 public:
  using BuildFn = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

  GradCheck(BuildFn build, double step = 1e-4)
      : build_(std::move(build)), step_(step) {}

  GradCheck& add_input(Shape shape, std::vector<double> data) {
    inputs_.emplace_back(shape, std::move(data));
    return *this;
  }

  GradCheck& add_input_random(Shape shape, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
    std::vector<double> d(std::size_t(shape.numel()));
    for (auto& v : d) v = rng.uniform(lo, hi);
    inputs_.emplace_back(shape, std::move(d));
    return *this;
  }

  // also perturb the values of these parameters
  GradCheck& add_param(Parameter<double>* p) {
    params_.push_back(p);
    return *this;
  }

  // max relative error between analytic and numeric gradients,
  // rel = |a - f| / max(|a|, |f|, 1)
  double max_rel_error() {
    std::vector<std::vector<double>> analytic_in;
    std::vector<std::vector<double>> analytic_par;
    {
      Tape<double> tape;
      std::vector<Var> vars;
      for (auto& [shape, data] : inputs_)
        vars.push_back(tape.input(shape, data, /*requires_grad=*/true));
      for (auto* p : params_) p->zero_grad();
      Var loss = build_(tape, vars);
      tape.backward(loss);
      for (Var v : vars) analytic_in.push_back(tape.grad_of(v));
      for (auto* p : params_) analytic_par.push_back(p->grad);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      auto& data = inputs_[i].second;
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double keep = data[j];
        data[j] = keep + step_;
        const double fp = eval();
        data[j] = keep - step_;
        const double fm = eval();
        data[j] = keep;
        worst = std::max(worst,
                         rel_err(analytic_in[i][j], (fp - fm) / (2 * step_)));
      }
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& val = params_[i]->value;
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double keep = val[j];
        val[j] = keep + step_;
        const double fp = eval();
        val[j] = keep - step_;
        const double fm = eval();
        val[j] = keep;
        worst = std::max(worst,
                         rel_err(analytic_par[i][j], (fp - fm) / (2 * step_)));
      }
    }
    return worst;
  }

  static double rel_err(double a, double f) {
    double d = std::abs(a - f);
    return d / std::max({std::abs(a), std::abs(f), 1.0});
  }

 private:
  BuildFn build_;
  double step_;
  std::vector<std::pair<Shape, std::vector<double>>> inputs_;
  std::vector<Parameter<double>*> params_;

  double eval() {
    Tape<double> tape;
    std::vector<Var> vars;
    for (auto& [shape, data] : inputs_) vars.push_back(tape.input(shape, data));
    return tape.value(build_(tape, vars))[0];
  }
};

struct CheckResult {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

}  // namespace fusenas
