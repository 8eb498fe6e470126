#pragma once

// "TWC1" tensor container, little-endian:
//   magic "TWC1" | u32 version | u32 n_tensors
//   per tensor: u16 name length | name bytes | u8 rank | u32 dims[rank] | f64 payload (row-major)
//   u32 CRC32 of every preceding byte

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tunnelwave/tensor.hpp"

namespace tw::ckpt {

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;

  bool operator==(const NamedArray&) const = default;
};

std::vector<std::uint8_t> encode(std::span<const NamedArray> arrays);
std::vector<NamedArray> decode(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

/// Name-indexed view of a decoded checkpoint.
class ArrayMap {
 public:
  explicit ArrayMap(std::vector<NamedArray> arrays);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const NamedArray& at(const std::string& name) const;

  /// Copies a stored array into `dst`, which must have the same shape.
  void copy_into(const std::string& name, ad::Tensor& dst) const;
  double scalar(const std::string& name) const;

  const std::vector<NamedArray>& arrays() const noexcept { return arrays_; }

 private:
  std::vector<NamedArray> arrays_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace tw::ckpt
