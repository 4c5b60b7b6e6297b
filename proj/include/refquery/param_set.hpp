#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "refquery/tensor.hpp"

namespace refquery::nd {

/// Named parameter tensors with a per-parameter trainable flag.
class ParamSet {
 public:
  std::size_t add(std::string name, Tensor value, bool trainable = true);

  std::size_t size() const { return entries_.size(); }
  bool contains(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  const std::string& name(std::size_t i) const { return entries_.at(i).name; }
  Tensor& value(std::size_t i) { return entries_.at(i).value; }
  const Tensor& value(std::size_t i) const { return entries_.at(i).value; }
  Tensor& value(std::string_view name) { return value(index_of(name)); }
  const Tensor& value(std::string_view name) const {
    return value(index_of(name));
  }

  bool trainable(std::size_t i) const { return entries_.at(i).trainable; }
  void set_trainable(std::size_t i, bool trainable);
  void set_all_trainable(bool trainable);
  std::vector<bool> trainable_mask() const;

  /// Total scalar count, optionally restricted to trainable entries.
  std::size_t parameter_count() const;
  std::size_t trainable_count() const;

  /// CRC32 over names, shapes and raw fp32 bytes of every entry.
  std::uint32_t checksum() const;
  /// CRC32 over the frozen entries only.
  std::uint32_t frozen_checksum() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  struct Entry {
    std::string name;
    Tensor value;
    bool trainable = true;
    friend bool operator==(const Entry&, const Entry&) = default;
  };
  std::vector<Entry> entries_;
};

/// One gradient tensor per ParamSet entry, shaped like the parameter.
/// Frozen entries keep a zero tensor.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParamSet& params);

  std::size_t size() const { return grads_.size(); }
  Tensor& operator[](std::size_t i) { return grads_.at(i); }
  const Tensor& operator[](std::size_t i) const { return grads_.at(i); }

  void zero();
  void add(const Gradients& other);
  void scale(float factor);
  bool all_finite() const;

 private:
  std::vector<Tensor> grads_;
};

}  // namespace refquery::nd
