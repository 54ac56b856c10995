#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "star/core/tensor.hpp"

namespace star::core {

struct ParamId {
  std::size_t index = static_cast<std::size_t>(-1);
  bool valid() const { return index != static_cast<std::size_t>(-1); }
  bool operator==(const ParamId&) const = default;
};

/// Named leaf tensors with gradient buffers. Entries are never removed, so a
/// ParamId stays valid for the lifetime of the set.
class ParameterSet {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
  };

  ParamId add(std::string name, Tensor init, bool trainable = true);
  ParamId find(const std::string& name) const;
  ParamId require(const std::string& name) const;

  Entry& entry(ParamId id) { return entries_.at(id.index); }
  const Entry& entry(ParamId id) const { return entries_.at(id.index); }
  Tensor& value(ParamId id) { return entries_.at(id.index).value; }
  const Tensor& value(ParamId id) const { return entries_.at(id.index).value; }
  Tensor& grad(ParamId id) { return entries_.at(id.index).grad; }
  const Tensor& grad(ParamId id) const { return entries_.at(id.index).grad; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  void set_trainable_prefix(const std::string& prefix, bool trainable);

  /// Copies values (not gradients) from another set with identical names and shapes.
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> by_name_;
};

}  // namespace star::core
