#include <cstdlib>
#include <string>

#include "credfuse/error.hpp"
#include "credfuse/kernels.hpp"

namespace credfuse::kernels {

namespace {

constexpr KernelTable kScalarTable{&scalar::dot, &scalar::axpy, &scalar::max, &scalar::sum};
#ifdef CREDFUSE_HAVE_AVX2_KERNELS
constexpr KernelTable kAvx2Table{&avx2::dot, &avx2::axpy, &avx2::max, &avx2::sum};
#endif

Isa detect() {
  if (const char* env = std::getenv("CREDFUSE_KERNELS"); env != nullptr && std::string(env) == "scalar")
    return Isa::kScalar;
  return isa_supported(Isa::kAvx2) ? Isa::kAvx2 : Isa::kScalar;
}

Isa& current() {
  static Isa isa = detect();
  return isa;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#ifdef CREDFUSE_HAVE_AVX2_KERNELS
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table_for(Isa isa) {
#ifdef CREDFUSE_HAVE_AVX2_KERNELS
  if (isa == Isa::kAvx2) return kAvx2Table;
#endif
  (void)isa;
  return kScalarTable;
}

const KernelTable& active() { return table_for(current()); }

Isa active_isa() { return current(); }

void select(Isa isa) {
  if (!isa_supported(isa)) throw ContractError("kernel ISA " + std::string(isa_name(isa)) + " not supported on this CPU");
  current() = isa;
}

std::string_view isa_name(Isa isa) { return isa == Isa::kAvx2 ? "avx2" : "scalar"; }

}  // namespace credfuse::kernels
