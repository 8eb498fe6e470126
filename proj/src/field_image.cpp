#include "tunnelwave/field_image.hpp"

#include <algorithm>
#include <cmath>

namespace tw {

bool FieldImage::is_normalized() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; });
}

}  // namespace tw
