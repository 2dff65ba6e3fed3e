#pragma once

// Scalar numerics shared by the analytic and rate-function modules:
// adaptive quadrature, bracketed root finding and concave maximization.

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ldbranch::numeric {

class BracketError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct QuadratureOptions {
  double abs_tol = 1e-10;
  double rel_tol = 1e-12;
  std::size_t max_intervals = 2000;
};

// Globally adaptive Gauss-Kronrod on a finite interval: the piece with the
// largest error estimate |K31 - G15| is bisected until the summed estimate
// falls below max(abs_tol, rel_tol * |I|) or the interval budget runs out.
template <class F>
double integrate(F&& f, double lo, double hi, QuadratureOptions opt = {}) {
  if (lo == hi) return 0.0;
  using boost::math::quadrature::gauss;
  using boost::math::quadrature::gauss_kronrod;
  struct Piece {
    double a, b, value, error;
    bool operator<(const Piece& o) const { return error < o.error; }
  };
  auto eval = [&](double a, double b) {
    const double k = gauss_kronrod<double, 31>::integrate(f, a, b, 0, 0.0);
    const double g = gauss<double, 15>::integrate(f, a, b);
    const double floor = 50.0 * std::numeric_limits<double>::epsilon() * std::abs(k);
    return Piece{a, b, k, std::max(std::abs(k - g), floor)};
  };
  std::vector<Piece> heap{eval(lo, hi)};
  double value = heap.front().value;
  double error = heap.front().error;
  while (std::isfinite(value) && error > std::max(opt.abs_tol, opt.rel_tol * std::abs(value)) &&
         heap.size() < opt.max_intervals) {
    std::pop_heap(heap.begin(), heap.end());
    const Piece worst = heap.back();
    heap.pop_back();
    const double mid = 0.5 * (worst.a + worst.b);
    if (!(mid > worst.a && mid < worst.b)) {
      heap.push_back(worst);
      std::push_heap(heap.begin(), heap.end());
      break;
    }
    for (const auto& piece : {eval(worst.a, mid), eval(mid, worst.b)}) {
      heap.push_back(piece);
      std::push_heap(heap.begin(), heap.end());
    }
    value = error = 0.0;
    for (const auto& piece : heap) {
      value += piece.value;
      error += piece.error;
    }
  }
  return value;
}

// Integral over [lo, hi] of an integrand with a near-singularity of width
// `scale` at hi: the interval is cut geometrically toward hi so that every
// piece is resolved at modest depth.
template <class F>
double integrate_graded(F&& f, double lo, double hi, double scale, QuadratureOptions opt = {}) {
  const double len = hi - lo;
  if (!(scale > 0.0) || scale >= 0.1 * len) return integrate(f, lo, hi, opt);
  double sum = 0.0;
  double left = lo;
  double gap = 0.1 * len;
  while (gap > 1e-3 * scale) {
    const double right = hi - gap;
    sum += integrate(f, left, right, opt);
    left = right;
    gap *= 0.1;
  }
  return sum + integrate(f, left, hi, opt);
}

struct RootResult {
  double x = 0.0;
  int iterations = 0;
};

// Root of a continuous f on [lo, hi] with f(lo) and f(hi) of opposite sign.
// Bisection safeguards secant steps; stops at rel_tol in x.
template <class F>
RootResult find_root(F&& f, double lo, double hi, double rel_tol = 1e-12, int max_iter = 400) {
  if (!(lo <= hi)) throw BracketError("find_root: empty interval");
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return {lo, 0};
  if (fhi == 0.0) return {hi, 0};
  if (!(std::isfinite(flo) || std::isfinite(fhi)) || (flo > 0.0) == (fhi > 0.0))
    throw BracketError("find_root: root not bracketed on [" + std::to_string(lo) + ", " +
                       std::to_string(hi) + "]");

  int it = 0;
  bool last_bisect = true;
  while (it < max_iter) {
    ++it;
    const double width = hi - lo;
    if (width <= rel_tol * std::max(std::abs(lo), std::abs(hi)) ||
        width <= std::numeric_limits<double>::min())
      break;

    double x;
    const double secant = (std::isfinite(flo) && std::isfinite(fhi)) ? hi - fhi * (hi - lo) / (fhi - flo)
                                                                   : 0.5 * (lo + hi);
    // Alternate: a secant step is accepted only if it lands inside the
    // middle of the bracket and the previous step was a bisection.
    if (last_bisect && secant > lo + 0.01 * width && secant < hi - 0.01 * width) {
      x = secant;
      last_bisect = false;
    } else {
      x = 0.5 * (lo + hi);
      last_bisect = true;
    }
    const double fx = f(x);
    if (fx == 0.0) return {x, it};
    if ((fx > 0.0) == (flo > 0.0)) {
      lo = x;
      flo = fx;
    } else {
      hi = x;
      fhi = fx;
    }
  }
  // Return the endpoint with the smaller residual.
  if (std::isfinite(flo) && std::isfinite(fhi))
    return {std::abs(flo) < std::abs(fhi) ? lo : hi, it};
  return {0.5 * (lo + hi), it};
}

struct MaxResult {
  double x = 0.0;
  double value = 0.0;
  int iterations = 0;
};

// Maximizer of a concave f on [lo, hi]. Golden-section search down to
// width_tol, then, when a derivative is supplied, a bisection polish on its
// sign change.
template <class F, class DF>
MaxResult maximize_concave(F&& f, DF&& df, double lo, double hi, double width_tol = 1e-10) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo;
  double b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c);
  double fd = f(d);
  int it = 0;
  while (b - a > width_tol && it < 300) {
    ++it;
    if (fc >= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  double x = 0.5 * (a + b);

  // Derivative polish: widen the final bracket until the derivative changes
  // sign, then bisect on it.
  double half = 1e3 * width_tol;
  double pa = std::max(lo, x - half);
  double pb = std::min(hi, x + half);
  while (!(df(pa) > 0.0 && df(pb) < 0.0) && (pa > lo || pb < hi)) {
    half *= 10.0;
    pa = std::max(lo, x - half);
    pb = std::min(hi, x + half);
  }
  if (df(pa) > 0.0 && df(pb) < 0.0) {
    for (int k = 0; k < 200; ++k) {
      ++it;
      const double m = 0.5 * (pa + pb);
      if (m <= pa || m >= pb) break;
      if (df(m) > 0.0) pa = m;
      else pb = m;
    }
    x = 0.5 * (pa + pb);
  }
  double fx = f(x);
  // Endpoint maxima (monotone objectives) are reported at the boundary.
  const double flo = f(lo);
  const double fhi = f(hi);
  if (flo > fx) {
    x = lo;
    fx = flo;
  }
  if (fhi > fx) {
    x = hi;
    fx = fhi;
  }
  return {x, fx, it};
}

}  // namespace ldbranch::numeric
