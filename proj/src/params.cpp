// SPDX-License-Identifier: Apache-2.0

#include "role_forge/params.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace role_forge {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

void fnv_mix(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

void ParamSet::add(const std::string& name, Tensor t) {
  if (!tensors_.emplace(name, std::move(t)).second) throw std::invalid_argument("duplicate parameter " + name);
}

const Tensor& ParamSet::get(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

Tensor& ParamSet::get_mut(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

void ParamSet::erase_prefix(const std::string& prefix) {
  for (auto it = tensors_.begin(); it != tensors_.end();) {
    if (it->first.rfind(prefix, 0) == 0) it = tensors_.erase(it);
    else ++it;
  }
}

std::vector<std::string> ParamSet::names() const {
  std::vector<std::string> out;
  out.reserve(tensors_.size());
  for (const auto& [k, v] : tensors_) out.push_back(k);
  return out;
}

std::size_t ParamSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& [k, v] : tensors_) n += v.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out;
  for (const auto& [k, v] : tensors_) out.add(k, Tensor(v.shape, 0.0));
  return out;
}

bool ParamSet::same_layout(const ParamSet& other) const {
  if (tensors_.size() != other.tensors_.size()) return false;
  auto it = other.tensors_.begin();
  for (const auto& [k, v] : tensors_) {
    if (k != it->first || !(v.shape == it->second.shape)) return false;
    ++it;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const auto& [k, v] : tensors_)
    for (double x : v.data)
      if (!std::isfinite(x)) return false;
  return true;
}

std::uint64_t ParamSet::checksum() const {
  std::uint64_t h = kFnvOffset;
  for (const auto& [k, v] : tensors_) {
    fnv_mix(h, k.data(), k.size());
    for (int d : v.shape.dims()) fnv_mix(h, &d, sizeof d);
    fnv_mix(h, v.data.data(), v.data.size() * sizeof(double));
  }
  return h;
}

double ParamSet::l2_norm() const {
  double s = 0.0;
  for (const auto& [k, v] : tensors_)
    for (double x : v.data) s += x * x;
  return std::sqrt(s);
}

bool operator==(const ParamSet& a, const ParamSet& b) {
  if (!a.same_layout(b)) return false;
  auto it = b.tensors_.begin();
  for (const auto& [k, v] : a.tensors_) {
    if (std::memcmp(v.data.data(), it->second.data.data(), v.data.size() * sizeof(double)) != 0) return false;
    ++it;
  }
  return true;
}

Var ParamBinder::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var v = tape_.leaf(params_.get(name), requires_grad_);
  bound_.emplace(name, v);
  return v;
}

ParamSet ParamBinder::gradients() const {
  ParamSet out = params_.zeros_like();
  for (const auto& [name, var] : bound_) {
    const auto& g = tape_.grad(var);
    if (g.empty()) continue;
    out.get_mut(name).data = g;
  }
  return out;
}

}  // namespace role_forge
