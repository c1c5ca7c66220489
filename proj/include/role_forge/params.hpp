// SPDX-License-Identifier: Apache-2.0
//
// Named parameter collections and their binding onto a tape.

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "role_forge/autodiff.hpp"

namespace role_forge {

using ad::Shape;
using ad::Tape;
using ad::Tensor;
using ad::Var;

/// Named, versioned collection of fp64 tensors. Iteration order is the
/// lexicographic order of names, which makes serialization deterministic.
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor>;

  void add(const std::string& name, Tensor t);
  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get_mut(const std::string& name);
  void erase_prefix(const std::string& prefix);

  std::vector<std::string> names() const;
  std::size_t size() const { return tensors_.size(); }
  std::size_t total_elements() const;
  bool empty() const { return tensors_.empty(); }

  std::uint64_t version() const { return version_; }
  void bump_version() { ++version_; }
  void set_version(std::uint64_t v) { version_ = v; }

  /// Same names and shapes, every element zero.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;
  bool all_finite() const;
  /// FNV-1a over names, shapes, and raw value bytes.
  std::uint64_t checksum() const;
  double l2_norm() const;

  Map::const_iterator begin() const { return tensors_.begin(); }
  Map::const_iterator end() const { return tensors_.end(); }
  Map::iterator begin() { return tensors_.begin(); }
  Map::iterator end() { return tensors_.end(); }

  friend bool operator==(const ParamSet& a, const ParamSet& b);

 private:
  Map tensors_;
  std::uint64_t version_ = 0;
};

/// Lazily creates one leaf per parameter name on a tape.
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamSet& params, bool requires_grad = true)
      : tape_(tape), params_(params), requires_grad_(requires_grad) {}

  Var operator()(const std::string& name);
  Tape& tape() { return tape_; }
  const ParamSet& params() const { return params_; }
  bool has(const std::string& name) const { return params_.contains(name); }

  /// Gradients of every bound parameter, zeros for the unbound ones.
  ParamSet gradients() const;
  const std::map<std::string, Var>& bound() const { return bound_; }

 private:
  Tape& tape_;
  const ParamSet& params_;
  bool requires_grad_;
  std::map<std::string, Var> bound_;
};

}  // namespace role_forge
