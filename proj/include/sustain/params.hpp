#pragma once

#include <string>
#include <vector>

#include "sustain/graph.hpp"

namespace sustain {

struct ParamEntry {
  std::string name;
  Value node;
  bool trainable = true;
};

/// Named parameter collection with stable insertion order, so optimizer
/// sweeps and serialization are deterministic.
class ParamSet {
 public:
  Value add(const std::string& name, Tensor init, bool trainable = true);
  Value at(const std::string& name) const;
  bool has(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);
  bool is_trainable(const std::string& name) const;
  void zero_grad();
  std::size_t size() const { return entries_.size(); }
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

 private:
  std::vector<ParamEntry> entries_;
  const ParamEntry* find(const std::string& name) const;
  ParamEntry* find(const std::string& name);
};

}  // namespace sustain
