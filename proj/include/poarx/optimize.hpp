#pragma once

// Small deterministic optimizers: BFGS with backtracking line search for the
// margin likelihoods, and Brent's method for the scalar dependence parameter.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

namespace poarx::optim {

/// Returns f(x) and writes the gradient into `grad`. May return +inf for
/// infeasible points (the gradient is then ignored).
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct BfgsOptions {
  int max_iterations = 500;
  double f_tolerance = 1e-8;  // relative change in f
  double g_tolerance = 1e-6;  // max |g| relative to 1 + |f|
  double max_step = 2.0;      // cap on max |dx| of a trial step
};

struct BfgsResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  Eigen::VectorXd grad;
  int iterations = 0;
  bool converged = false;
  std::string message;
  std::vector<double> trace;  // f at every accepted iterate, starting with x0
};

inline BfgsResult minimize_bfgs(const Objective& fn, Eigen::VectorXd x0, const BfgsOptions& opt) {
  const Eigen::Index d = x0.size();
  BfgsResult res;
  res.x = std::move(x0);
  res.grad = Eigen::VectorXd::Zero(d);
  res.f = fn(res.x, res.grad);
  if (!std::isfinite(res.f)) {
    res.message = "objective is not finite at the starting point";
    return res;
  }
  res.trace.push_back(res.f);
  if (d == 0) {
    res.converged = true;
    res.message = "no free parameters";
    return res;
  }

  Eigen::MatrixXd inv_h = Eigen::MatrixXd::Identity(d, d);
  bool scaled = false;
  int small_changes = 0;
  Eigen::VectorXd g_new(d), x_new(d);

  for (int iter = 0; iter < opt.max_iterations; ++iter) {
    res.iterations = iter + 1;
    const double gmax = res.grad.cwiseAbs().maxCoeff();
    if (gmax <= opt.g_tolerance * (1.0 + std::abs(res.f))) {
      res.converged = true;
      res.message = "gradient tolerance reached";
      return res;
    }

    Eigen::VectorXd dir = -inv_h * res.grad;
    double slope = res.grad.dot(dir);
    if (!(slope < 0.0)) {
      inv_h.setIdentity();
      dir = -res.grad;
      slope = res.grad.dot(dir);
    }
    double step = 1.0;
    const double dmax = dir.cwiseAbs().maxCoeff();
    if (dmax > opt.max_step) step = opt.max_step / dmax;

    // Backtracking Armijo search.
    double f_new = std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = res.x + step * dir;
      f_new = fn(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= res.f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= (std::isfinite(f_new) ? 0.5 : 0.2);
    }
    if (!accepted) {
      res.converged = gmax <= 1e-3 * (1.0 + std::abs(res.f));
      res.message = "line search could not decrease the objective";
      return res;
    }

    const Eigen::VectorXd s = x_new - res.x;
    const Eigen::VectorXd yv = g_new - res.grad;
    const double rel_change = (res.f - f_new) / (1.0 + std::abs(res.f));
    res.x = x_new;
    res.grad = g_new;
    res.f = f_new;
    res.trace.push_back(f_new);

    const double sy = s.dot(yv);
    if (sy > 1e-12 * s.norm() * yv.norm()) {
      if (!scaled) {
        inv_h *= sy / yv.squaredNorm();
        scaled = true;
      }
      const double r = 1.0 / sy;
      const Eigen::VectorXd hy = inv_h * yv;
      inv_h += (r * r * (sy + yv.dot(hy))) * (s * s.transpose()) -
               r * (hy * s.transpose() + s * hy.transpose());
    }

    small_changes = rel_change < opt.f_tolerance ? small_changes + 1 : 0;
    if (small_changes >= 3) {
      res.converged = true;
      res.message = "relative objective change below tolerance";
      return res;
    }
  }
  res.message = "maximum iterations reached";
  return res;
}

struct ScalarOptimum {
  double x = 0.0;
  double f = -std::numeric_limits<double>::infinity();
  int evaluations = 0;
};

/// Maximizes f on [a, b] with Brent's golden-section/parabolic method.
inline ScalarOptimum brent_maximize(const std::function<double(double)>& f, double a, double b,
                                    double tol, int max_iter = 200) {
  constexpr double golden = 0.3819660112501051;
  ScalarOptimum out;
  double x = a + golden * (b - a);
  double w = x, v = x;
  double fx = -f(x);
  ++out.evaluations;
  double fw = fx, fv = fx;
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    const double m = 0.5 * (a + b);
    const double tol1 = tol * 0.5 + 1e-12 * std::abs(x);
    const double tol2 = 2.0 * tol1;
    if (std::abs(x - m) <= tol2 - 0.5 * (b - a)) break;
    bool golden_step = true;
    if (std::abs(e) > tol1) {
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      const double etemp = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * etemp) && p > q * (a - x) && p < q * (b - x)) {
        d = p / q;
        const double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (m - x >= 0.0) ? tol1 : -tol1;
        golden_step = false;
      }
    }
    if (golden_step) {
      e = (x >= m) ? a - x : b - x;
      d = golden * e;
    }
    const double u = std::abs(d) >= tol1 ? x + d : x + (d >= 0.0 ? tol1 : -tol1);
    double fu = -f(u);
    ++out.evaluations;
    if (!std::isfinite(fu)) fu = std::numeric_limits<double>::infinity();
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  out.x = x;
  out.f = -fx;
  return out;
}

}  // namespace poarx::optim
