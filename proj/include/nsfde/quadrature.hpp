#pragma once

#include <cmath>
#include <string>

#include "nsfde/errors.hpp"

namespace nsfde {

namespace detail {

template <class F>
double adaptive_simpson_step(const F& f, double a, double m, double b, double fa,
                             double fm, double fb, double whole, double tol,
                             int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  // Richardson: Simpson halving gains a factor 16, so |delta|/15 estimates
  // the error of left+right.
  if (std::abs(delta) <= 15.0 * tol) return left + right + delta / 15.0;
  if (depth <= 0)
    throw QuadratureError("adaptive Simpson failed to converge on [" +
                          std::to_string(a) + ", " + std::to_string(b) +
                          "]: local error estimate " + std::to_string(std::abs(delta) / 15.0));
  return adaptive_simpson_step(f, a, lm, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_step(f, m, rm, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

// Adaptive Simpson quadrature with an absolute tolerance.  Throws
// QuadratureError instead of silently returning a low-accuracy value when
// the recursion budget is exhausted.
template <class F>
double adaptive_simpson(const F& f, double a, double b, double abs_tol,
                        int max_depth = 52) {
  if (a == b) return 0.0;
  const double fa = f(a);
  const double fb = f(b);
  const double m = 0.5 * (a + b);
  const double fm = f(m);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return detail::adaptive_simpson_step(f, a, m, b, fa, fm, fb, whole, abs_tol,
                                       max_depth);
}

}  // namespace nsfde
