#include "selfdistill/parameters.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include <fmt/format.h>

#include "selfdistill/errors.hpp"
#include "selfdistill/kernels.hpp"

namespace selfdistill {

std::size_t ParameterSet::add(std::string name, std::vector<std::size_t> shape, double fill) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  add(ParamBlock{std::move(name), std::move(shape), std::vector<double>(n, fill)});
  return blocks_.size() - 1;
}

void ParameterSet::add(ParamBlock block) {
  const std::size_t n = std::accumulate(block.shape.begin(), block.shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != block.values.size()) {
    throw ShapeError(fmt::format("parameter block '{}' declares {} values but holds {}", block.name, n,
                                 block.values.size()));
  }
  if (contains(block.name)) throw InvalidInput(fmt::format("duplicate parameter block '{}'", block.name));
  blocks_.push_back(std::move(block));
}

std::size_t ParameterSet::total_size() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.values.size();
  return n;
}

std::size_t ParameterSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  throw InvalidInput(fmt::format("no parameter block named '{}'", name));
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& b : blocks_) {
    if (b.name == name) return true;
  }
  return false;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  for (const auto& b : blocks_) out.blocks_.push_back({b.name, b.shape, std::vector<double>(b.values.size(), 0.0)});
  return out;
}

void ParameterSet::axpy(double alpha, const ParameterSet& other) {
  if (!same_layout(other)) throw ShapeError("parameter sets have different layouts");
  for (std::size_t i = 0; i < blocks_.size(); ++i) kernels::axpy(alpha, other.blocks_[i].values, blocks_[i].values);
}

void ParameterSet::scale(double alpha) {
  for (auto& b : blocks_) kernels::scale(alpha, b.values);
}

double ParameterSet::squared_norm() const {
  double total = 0.0;
  for (const auto& b : blocks_) total += kernels::dot(b.values, b.values);
  return total;
}

bool ParameterSet::all_finite() const {
  for (const auto& b : blocks_) {
    for (double v : b.values) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name != other.blocks_[i].name || blocks_[i].shape != other.blocks_[i].shape) return false;
  }
  return true;
}

void ParameterSet::append(const ParameterSet& other) {
  for (const auto& b : other.blocks_) add(b);
}

double& ParameterSet::flat(std::size_t i) {
  for (auto& b : blocks_) {
    if (i < b.values.size()) return b.values[i];
    i -= b.values.size();
  }
  throw InvalidInput("flat parameter index out of range");
}

}  // namespace selfdistill
