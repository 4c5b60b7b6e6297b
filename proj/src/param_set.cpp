#include "refquery/param_set.hpp"

#include <zlib.h>

#include "refquery/error.hpp"

namespace refquery::nd {
namespace {

uLong crc_update(uLong crc, const void* data, std::size_t bytes) {
  return crc32(crc, static_cast<const Bytef*>(data), static_cast<uInt>(bytes));
}

}  // namespace

std::size_t ParamSet::add(std::string name, Tensor value, bool trainable) {
  if (contains(name)) {
    throw InvalidArgumentError("duplicate parameter name: " + name);
  }
  entries_.push_back({std::move(name), std::move(value), trainable});
  return entries_.size() - 1;
}

bool ParamSet::contains(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return true;
  }
  return false;
}

std::size_t ParamSet::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw InvalidArgumentError("unknown parameter: " + std::string(name));
}

void ParamSet::set_trainable(std::size_t i, bool trainable) {
  entries_.at(i).trainable = trainable;
}

void ParamSet::set_all_trainable(bool trainable) {
  for (auto& e : entries_) e.trainable = trainable;
}

std::vector<bool> ParamSet::trainable_mask() const {
  std::vector<bool> mask;
  mask.reserve(entries_.size());
  for (const auto& e : entries_) mask.push_back(e.trainable);
  return mask;
}

std::size_t ParamSet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::size_t ParamSet::trainable_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.value.size();
  }
  return n;
}

std::uint32_t ParamSet::checksum() const {
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& e : entries_) {
    crc = crc_update(crc, e.name.data(), e.name.size());
    for (std::size_t d : e.value.shape()) {
      const auto dim = static_cast<std::uint64_t>(d);
      crc = crc_update(crc, &dim, sizeof dim);
    }
    crc = crc_update(crc, e.value.data(), e.value.size() * sizeof(float));
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t ParamSet::frozen_checksum() const {
  ParamSet frozen;
  for (const auto& e : entries_) {
    if (!e.trainable) frozen.add(e.name, e.value, false);
  }
  return frozen.checksum();
}

Gradients::Gradients(const ParamSet& params) {
  grads_.reserve(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads_.emplace_back(params.value(i).shape());
  }
}

void Gradients::zero() {
  for (auto& g : grads_) g.fill(0.0f);
}

void Gradients::add(const Gradients& other) {
  if (other.size() != size()) {
    throw InvalidShapeError("gradient set size mismatch");
  }
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    float* dst = grads_[i].data();
    const float* src = other.grads_[i].data();
    for (std::size_t j = 0; j < grads_[i].size(); ++j) dst[j] += src[j];
  }
}

void Gradients::scale(float factor) {
  for (auto& g : grads_) {
    for (float& v : g.values()) v *= factor;
  }
}

bool Gradients::all_finite() const {
  for (const auto& g : grads_) {
    if (!g.all_finite()) return false;
  }
  return true;
}

}  // namespace refquery::nd
