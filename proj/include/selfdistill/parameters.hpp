#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace selfdistill {

struct ParamBlock {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  bool operator==(const ParamBlock&) const = default;
};

// Ordered named blocks of doubles. Gradients use a set with the same layout.
class ParameterSet {
 public:
  // Returns the block index.
  std::size_t add(std::string name, std::vector<std::size_t> shape, double fill = 0.0);
  void add(ParamBlock block);

  std::size_t block_count() const { return blocks_.size(); }
  std::size_t total_size() const;

  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }
  ParamBlock& block(std::size_t i) { return blocks_.at(i); }
  // Throws InvalidInput when absent.
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::span<double> values(std::size_t i) { return blocks_.at(i).values; }
  std::span<const double> values(std::size_t i) const { return blocks_.at(i).values; }

  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  ParameterSet zeros_like() const;
  // this += alpha * other; layouts must match.
  void axpy(double alpha, const ParameterSet& other);
  void scale(double alpha);
  double squared_norm() const;
  bool all_finite() const;
  bool same_layout(const ParameterSet& other) const;

  // Concatenates the blocks of other after ours.
  void append(const ParameterSet& other);

  // Flat element access across blocks, in block order.
  double& flat(std::size_t i);

  bool operator==(const ParameterSet&) const = default;

 private:
  std::vector<ParamBlock> blocks_;
};

}  // namespace selfdistill
