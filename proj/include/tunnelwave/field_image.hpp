#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace tw {

/// Real-valued image stored row-major. Rows run across the tunnel height,
/// columns along the range axis. Normalized field images live in [0, 1];
/// generator outputs share the type but are only guaranteed non-negative.
struct FieldImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  FieldImage() = default;
  FieldImage(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  double& at(std::size_t row, std::size_t col) { return values[row * width + col]; }
  double at(std::size_t row, std::size_t col) const { return values[row * width + col]; }

  std::span<const double> row(std::size_t r) const { return std::span(values).subspan(r * width, width); }
  std::span<double> row(std::size_t r) { return std::span(values).subspan(r * width, width); }

  std::size_t size() const noexcept { return values.size(); }

  /// True when every value is finite and inside [0, 1].
  bool is_normalized() const;

  bool operator==(const FieldImage&) const = default;
};

}  // namespace tw
