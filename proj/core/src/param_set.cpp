#include "dynxl/param_set.hpp"

#include "dynxl/errors.hpp"

namespace dynxl {

void ParamSet::add(std::string name, Tensor value) {
  if (index_.contains(name)) throw StateError("duplicate parameter name: " + name);
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
}

std::optional<std::size_t> ParamSet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamSet::index(const std::string& name) const {
  auto found = find(name);
  if (!found) throw StateError("unknown parameter: " + name);
  return *found;
}

std::size_t ParamSet::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.size();
  return n;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (!tensors_[i].same_shape(other.tensors_[i])) return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.all_finite()) return false;
  }
  return true;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < size(); ++i) out.add(names_[i], Tensor(tensors_[i].shape()));
  return out;
}

bool bit_equal(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bit_equal(a[i].values(), b[i].values())) return false;
  }
  return true;
}

}  // namespace dynxl
