#include "credfuse/numeric.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "credfuse/error.hpp"
#include "credfuse/kernels.hpp"
#include "credfuse/prob_vector.hpp"

namespace credfuse {

double log_sum_exp(std::span<const double> x) {
  const double m = kernels::max(x);
  if (!std::isfinite(m)) return m;  // empty, all -inf, or +inf present
  double acc = 0.0;
  for (double v : x) acc += std::exp(v - m);
  return m + std::log(acc);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.begin(), logits.end());
  const double m = kernels::max(logits);
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - m);
    total += v;
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.begin(), logits.end());
  for (double& v : out) v -= lse;
  return out;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ParameterError("softplus_inverse requires y > 0, got " + std::to_string(y));
  if (y > 30.0) return y + std::log(-std::expm1(-y));
  return std::log(std::expm1(y));
}

double digamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw ParameterError("digamma requires finite x > 0, got " + std::to_string(x));
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // -1/(12x^2) + 1/(120x^4) - 1/(252x^6) + 1/(240x^8) - 1/(132x^10)
  const double series =
      inv2 * (-1.0 / 12 + inv2 * (1.0 / 120 + inv2 * (-1.0 / 252 + inv2 * (1.0 / 240 + inv2 * (-1.0 / 132)))));
  return shift + std::log(x) - 0.5 * inv + series;
}

double log_gamma(double x) {
  if (!(x > 0.0)) throw ParameterError("log_gamma requires x > 0, got " + std::to_string(x));
  return std::lgamma(x);
}

std::size_t argmax(std::span<const double> x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < x.size(); ++i)
    if (x[i] > x[best]) best = i;
  return best;
}

bool on_simplex(std::span<const double> x, double tol) {
  if (x.empty()) return false;
  double total = 0.0;
  for (double v : x) {
    if (!std::isfinite(v) || v < 0.0) return false;
    total += v;
  }
  return std::abs(total - 1.0) <= tol;
}

ProbVector::ProbVector(std::vector<double> values) : values_(std::move(values)) {
  if (!on_simplex(values_, kTolerance)) throw ParameterError("probability vector is not on the simplex");
}

ProbVector ProbVector::uniform(std::size_t k) {
  if (k == 0) throw ParameterError("uniform distribution over zero classes");
  return unchecked(std::vector<double>(k, 1.0 / static_cast<double>(k)));
}

ProbVector ProbVector::one_hot(std::size_t k, std::size_t index) {
  if (index >= k) throw ParameterError("one-hot index out of range");
  std::vector<double> v(k, 0.0);
  v[index] = 1.0;
  return unchecked(std::move(v));
}

ProbVector ProbVector::unchecked(std::vector<double> values) {
  ProbVector p;
  p.values_ = std::move(values);
  return p;
}

}  // namespace credfuse
