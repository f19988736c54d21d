#include "sustain/params.hpp"

#include "sustain/errors.hpp"

namespace sustain {

const ParamEntry* ParamSet::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

ParamEntry* ParamSet::find(const std::string& name) {
  for (auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

Value ParamSet::add(const std::string& name, Tensor init, bool trainable) {
  if (find(name)) throw UsageError("parameter '" + name + "' already registered");
  ParamEntry e;
  e.name = name;
  e.node = make_param(std::move(init));
  e.trainable = trainable;
  entries_.push_back(std::move(e));
  return entries_.back().node;
}

Value ParamSet::at(const std::string& name) const {
  const ParamEntry* e = find(name);
  if (!e) throw UsageError("unknown parameter '" + name + "'");
  return e->node;
}

bool ParamSet::has(const std::string& name) const { return find(name) != nullptr; }

void ParamSet::set_trainable(const std::string& name, bool trainable) {
  ParamEntry* e = find(name);
  if (!e) throw UsageError("unknown parameter '" + name + "'");
  e->trainable = trainable;
}

bool ParamSet::is_trainable(const std::string& name) const {
  const ParamEntry* e = find(name);
  if (!e) throw UsageError("unknown parameter '" + name + "'");
  return e->trainable;
}

void ParamSet::zero_grad() {
  for (auto& e : entries_)
    if (e.node->has_grad()) e.node->grad.fill(0.0);
}

}  // namespace sustain
