#include "star/core/parameters.hpp"

#include "star/core/error.hpp"

namespace star::core {

ParamId ParameterSet::add(std::string name, Tensor init, bool trainable) {
  if (by_name_.count(name)) throw Error("duplicate parameter name '" + name + "'");
  const std::size_t idx = entries_.size();
  by_name_.emplace(name, idx);
  Tensor grad(init.shape());
  entries_.push_back(Entry{std::move(name), std::move(init), std::move(grad), trainable});
  return ParamId{idx};
}

ParamId ParameterSet::find(const std::string& name) const {
  auto it = by_name_.find(name);
  return it == by_name_.end() ? ParamId{} : ParamId{it->second};
}

ParamId ParameterSet::require(const std::string& name) const {
  ParamId id = find(name);
  if (!id.valid()) throw Error("unknown parameter '" + name + "'");
  return id;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

void ParameterSet::set_trainable_prefix(const std::string& prefix, bool trainable) {
  for (auto& e : entries_) {
    if (e.name.compare(0, prefix.size(), prefix) == 0) e.trainable = trainable;
  }
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  for (auto& e : entries_) {
    const ParamId src = other.require(e.name);
    const Tensor& v = other.value(src);
    if (v.shape() != e.value.shape()) {
      throw ShapeError("parameter '" + e.name + "' shape " + shape_str(e.value.shape()) + " vs " +
                       shape_str(v.shape()));
    }
    e.value = v;
  }
}

}  // namespace star::core
