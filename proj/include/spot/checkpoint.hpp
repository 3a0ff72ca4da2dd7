#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spot/dataset.hpp"
#include "spot/tensor.hpp"

namespace spot {

/// Versioned parameter container ("SPOT"): named float tensors plus run
/// bookkeeping (config text and its fingerprint, step/epoch counters, base
/// seed). Tensors are stored sorted by name, so save -> load -> save is
/// byte-identical.
struct CheckpointBundle {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t fingerprint = 0;
  std::uint64_t step = 0;
  std::uint32_t epoch = 0;
  std::uint64_t seed = 0;
  std::string config_text;
  std::vector<std::pair<std::string, TensorF>> tensors;

  void put(const std::string& name, const TensorF& t);
  void put_array(const std::string& name, const ArrayX<float>& a);
  void put_scalar(const std::string& name, float v);
  const TensorF* find(const std::string& name) const;
  /// Lookup that throws naming the missing tensor.
  const TensorF& require(const std::string& name) const;
  bool has(const std::string& name) const { return find(name) != nullptr; }

  void save(const std::string& path) const;
  static CheckpointBundle load(const std::string& path);
};

/// FNV-1a 64 over the resolved config text.
std::uint64_t fingerprint64(const std::string& text);

}  // namespace spot
