#pragma once

// Data-parallel double-precision kernels with a scalar reference path and
// vectorized variants chosen at runtime from what the CPU reports.
//
// Every variant computes the same mathematical quantity; reductions may
// associate differently, so variants agree to rounding, not bit-for-bit.
// Within one process the selected table is fixed unless select() is called,
// which keeps repeated runs reproducible.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace selfdistill::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // -inf for n == 0.
  double (*max)(const double* x, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
};

bool supported(Isa isa);
const KernelTable& table(Isa isa);

// Best supported variant, picked once on first use.
const KernelTable& active();
Isa active_isa();

// Pins the active table. Throws selfdistill::InvalidInput if the CPU
// lacks the requested instruction set.
void select(Isa isa);

std::vector<Isa> supported_isas();
std::string_view to_string(Isa isa);

namespace detail {
const KernelTable& scalar_table();
// nullptr when the variant was not compiled in.
const KernelTable* avx2_table();
}  // namespace detail

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

inline double max(std::span<const double> x) { return active().max(x.data(), x.size()); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  return active().squared_distance(a.data(), b.data(), a.size() < b.size() ? a.size() : b.size());
}

inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  active().axpy(alpha, x.data(), y.data(), x.size() < y.size() ? x.size() : y.size());
}

inline void scale(double alpha, std::span<double> x) { active().scale(alpha, x.data(), x.size()); }

}  // namespace selfdistill::kernels
