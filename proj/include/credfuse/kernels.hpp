#pragma once

// Dense inner-loop kernels. Every kernel has a portable scalar reference
// implementation and, on x86-64, an AVX2/FMA variant. The variant is chosen
// once at startup from the CPU feature flags; CREDFUSE_KERNELS=scalar in the
// environment forces the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace credfuse::kernels {

enum class Isa { kScalar, kAvx2 };

struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  double (*max)(const double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
};

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double max(const double* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define CREDFUSE_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
double max(const double* x, std::size_t n);
double sum(const double* x, std::size_t n);
}  // namespace avx2
#endif

/// True if this process can run the given variant.
bool isa_supported(Isa isa);

/// The table in use. Resolved on first call.
const KernelTable& active();
Isa active_isa();

/// Overrides the dispatch. Throws ContractError if the CPU lacks the ISA.
/// Not thread-safe; meant for tests and benchmarks.
void select(Isa isa);

const KernelTable& table_for(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size());
}
/// Maximum element; -inf for an empty span.
inline double max(std::span<const double> x) { return active().max(x.data(), x.size()); }
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

}  // namespace credfuse::kernels
