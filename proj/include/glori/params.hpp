#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "glori/autodiff.hpp"
#include "glori/error.hpp"
#include "glori/tensor.hpp"

namespace glori {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Ordered name -> tensor map. Insertion order is the serialisation and
// optimizer order.
class ParamSet {
 public:
  Tensor& add(std::string name, Tensor t) {
    if (contains(name)) throw UsageError("duplicate parameter '" + name + "'");
    entries_.push_back({std::move(name), std::move(t)});
    return entries_.back().tensor;
  }

  bool contains(std::string_view name) const { return find(name) != nullptr; }

  Tensor& operator[](std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this)[name]);
  }
  const Tensor& operator[](std::string_view name) const {
    const Tensor* t = find(name);
    if (!t) throw UsageError("unknown parameter '" + std::string(name) + "'");
    return *t;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.size();
    return n;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const NamedTensor& entry(std::size_t i) const { return entries_.at(i); }
  NamedTensor& entry(std::size_t i) { return entries_.at(i); }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    if (a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      if (a.entries_[i].name != b.entries_[i].name ||
          !(a.entries_[i].tensor == b.entries_[i].tensor)) {
        return false;
      }
    }
    return true;
  }

 private:
  const Tensor* find(std::string_view name) const {
    for (const auto& e : entries_) {
      if (e.name == name) return &e.tensor;
    }
    return nullptr;
  }

  std::vector<NamedTensor> entries_;
};

// Tape-side mirror of a ParamSet.
class VarSet {
 public:
  VarSet() = default;

  VarSet(Tape& tape, const ParamSet& params, bool trainable) {
    for (const auto& [name, t] : params) {
      Tensor copy = t;
      copy.set_requires_grad(trainable);
      names_.push_back(name);
      vars_.push_back(trainable ? tape.leaf(std::move(copy)) : tape.constant(std::move(copy)));
    }
  }

  bool contains(std::string_view name) const {
    for (const auto& n : names_) {
      if (n == name) return true;
    }
    return false;
  }

  Var operator[](std::string_view name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return vars_[i];
    }
    throw UsageError("unknown parameter '" + std::string(name) + "'");
  }

  // Gradients after tape.backward(), in parameter order.
  ParamSet gradients(const Tape& tape) const {
    ParamSet out;
    for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], tape.grad(vars_[i]));
    return out;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Var> vars_;
};

}  // namespace glori
