#include "credfuse/random.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "credfuse/error.hpp"

namespace credfuse {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double sample_uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

double sample_normal(Rng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

double sample_gamma(double shape, Rng& rng) {
  if (!(shape > 0.0) || !std::isfinite(shape))
    throw ParameterError("gamma shape must be finite and > 0, got " + std::to_string(shape));
  if (shape < 1.0) {
    double u = sample_uniform(rng);
    while (u <= 0.0) u = sample_uniform(rng);
    return sample_gamma(shape + 1.0, rng) * std::pow(u, 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x;
    double v;
    do {
      x = sample_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = sample_uniform(rng);
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (u > 0.0 && std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

std::vector<double> sample_dirichlet(std::span<const double> alpha, Rng& rng) {
  if (alpha.empty()) throw ParameterError("Dirichlet with no coordinates");
  std::vector<double> out(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    out[i] = sample_gamma(alpha[i], rng);
    total += out[i];
  }
  if (total > 0.0) {
    for (double& v : out) v /= total;
    return out;
  }
  // Every draw underflowed (all shapes tiny): the variate sits on a vertex,
  // chosen with probability proportional to alpha.
  std::discrete_distribution<std::size_t> pick(alpha.begin(), alpha.end());
  std::fill(out.begin(), out.end(), 0.0);
  out[pick(rng)] = 1.0;
  return out;
}

}  // namespace credfuse
