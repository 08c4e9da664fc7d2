#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace credfuse {

using Rng = std::mt19937_64;

/// Independent stream derived from a parent seed and a stream index.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Gamma(shape, 1) variate. Marsaglia-Tsang squeeze for shape >= 1; for
/// shape < 1 draws Gamma(shape + 1) and scales by U^(1/shape).
double sample_gamma(double shape, Rng& rng);

/// Dirichlet variate via normalized Gamma draws.
std::vector<double> sample_dirichlet(std::span<const double> alpha, Rng& rng);

double sample_uniform(Rng& rng);
double sample_normal(Rng& rng);

}  // namespace credfuse
