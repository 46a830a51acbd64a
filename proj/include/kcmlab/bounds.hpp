#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "kcmlab/error.hpp"

namespace kcmlab {

/// Parameters of the closed-form relaxation-time bounds. C is the absolute
/// constant whose existence is all that is asserted; callers choose it.
struct BoundParameters {
  double q = 0.5;
  int R = 1;
  std::uint64_t L_size = 1;
  double C = 1.0;

  void check() const {
    if (!(q > 0.0 && q <= 1.0)) throw PreconditionError("q must lie in (0, 1]");
    if (R < 1) throw PreconditionError("R must be at least 1");
    if (L_size < 1) throw PreconditionError("|L| must be at least 1");
    if (!(C > 0.0) || !std::isfinite(C)) throw PreconditionError("C must be positive");
  }
};

inline double log_theoretical_bound(const BoundParameters& p) {
  p.check();
  const double base = std::log(2.0 / p.q);
  const double R2 = static_cast<double>(p.R) * p.R;
  return p.C * R2 * std::min(std::log(static_cast<double>(p.L_size)), p.R * base) * base;
}

/// (2/q)^(C R^2 min(ln|L|, R ln(2/q))), natural logarithms.
inline double theoretical_bound(const BoundParameters& p) { return std::exp(log_theoretical_bound(p)); }

/// Two-block constant: 1 + exp(-delta q^(CR) / (C R^2)) once delta reaches
/// C R^2 / q^(CR), and (2/q)^(C R^2) below that.
inline double gamma(double delta, const BoundParameters& p) {
  p.check();
  if (delta < 0) throw PreconditionError("delta must be non-negative");
  const double R2 = static_cast<double>(p.R) * p.R;
  const double qCR = std::pow(p.q, p.C * p.R);
  const double threshold = p.C * R2 / qCR;
  if (delta >= threshold) return 1.0 + std::exp(-delta * qCR / (p.C * R2));
  return std::exp(p.C * R2 * std::log(2.0 / p.q));
}

struct RecursionResult {
  double value = 1.0;      // exp(log_value); may overflow to inf
  double log_value = 0.0;
  int iterations = 0;
  std::uint64_t final_size = 0;
  bool stalled = false;  // the volume stopped shrinking above the threshold
};

namespace detail {

inline std::uint64_t ceil_cbrt(std::uint64_t l) {
  auto n = static_cast<std::uint64_t>(std::cbrt(static_cast<double>(l)));
  while (n * n * n < l) ++n;
  while (n > 1 && (n - 1) * (n - 1) * (n - 1) >= l) --n;
  return n;
}

}  // namespace detail

/// Iterates Gamma_l <= (1 + 1/N) gamma(Delta) Gamma_{ceil(l/2) + N Delta} with
/// N = Delta = ceil(l^(1/3)) until l <= (2/q)^(CR), then applies the easy-case
/// base (2/q)^(C R^2 * R ln(2/q)). For small constants the halving step stops
/// shrinking l (near l^(1/3) = 2) before the threshold; the base case is then
/// applied at the stalled size and the result is marked.
inline RecursionResult recursion_bound(const BoundParameters& p) {
  p.check();
  const double log2q = std::log(2.0 / p.q);
  const double R = static_cast<double>(p.R);
  const double threshold = std::exp(p.C * R * log2q);
  RecursionResult res;
  std::uint64_t l = p.L_size;
  while (static_cast<double>(l) > threshold) {
    const std::uint64_t N = detail::ceil_cbrt(l);
    const std::uint64_t next = (l + 1) / 2 + N * N;
    if (next >= l) {
      res.stalled = true;
      break;
    }
    res.log_value += std::log1p(1.0 / static_cast<double>(N)) + std::log(gamma(static_cast<double>(N), p));
    ++res.iterations;
    l = next;
    if (res.iterations > 100000) throw Error("recursion did not terminate");
  }
  res.final_size = l;
  res.log_value += p.C * R * R * R * log2q * log2q;
  res.value = std::exp(res.log_value);
  return res;
}

}  // namespace kcmlab
