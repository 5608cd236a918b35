#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dynxl/tensor.hpp"

namespace dynxl {

/// Named tensors in a fixed insertion order. The order is part of the
/// checkpoint format and of every elementwise loop over parameters.
class ParamSet {
 public:
  void add(std::string name, Tensor value);

  std::size_t size() const noexcept { return tensors_.size(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor>& tensors() noexcept { return tensors_; }
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }

  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index(const std::string& name) const;  // throws StateError
  Tensor& at(const std::string& name) { return tensors_[index(name)]; }
  const Tensor& at(const std::string& name) const { return tensors_[index(name)]; }

  std::size_t element_count() const;
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;

  /// Same names and shapes, every element zero.
  ParamSet zeros_like() const;

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.tensors_ == b.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// True when both sets hold bitwise identical values in the same layout.
bool bit_equal(const ParamSet& a, const ParamSet& b);

}  // namespace dynxl
