#include <atomic>

#include "selfdistill/errors.hpp"
#include "selfdistill/kernels.hpp"

namespace selfdistill::kernels {

#ifndef SELFDISTILL_HAVE_AVX2
const KernelTable* detail::avx2_table() { return nullptr; }
#endif

namespace {

bool cpu_has_avx2() {
#if defined(SELFDISTILL_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* pick_best() {
  if (supported(Isa::avx2)) return detail::avx2_table();
  return &detail::scalar_table();
}

std::atomic<const KernelTable*>& active_slot() {
  static std::atomic<const KernelTable*> slot{pick_best()};
  return slot;
}

}  // namespace

bool supported(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2: {
      static const bool ok = detail::avx2_table() != nullptr && cpu_has_avx2();
      return ok;
    }
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!supported(isa)) {
    throw InvalidInput("kernel variant '" + std::string(to_string(isa)) + "' is not supported on this CPU");
  }
  return isa == Isa::avx2 ? *detail::avx2_table() : detail::scalar_table();
}

const KernelTable& active() { return *active_slot().load(std::memory_order_acquire); }

Isa active_isa() { return active().isa; }

void select(Isa isa) { active_slot().store(&table(isa), std::memory_order_release); }

std::vector<Isa> supported_isas() {
  std::vector<Isa> out{Isa::scalar};
  if (supported(Isa::avx2)) out.push_back(Isa::avx2);
  return out;
}

std::string_view to_string(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

}  // namespace selfdistill::kernels
