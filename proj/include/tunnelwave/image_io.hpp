#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tunnelwave/field_image.hpp"

namespace tw::io {

/// 16-bit binary graymap: "P5\n<w> <h>\n65535\n" then big-endian samples,
/// sample = round(65535 * clamp(pixel, 0, 1)).
std::vector<std::uint8_t> encode_pgm16(const FieldImage& image);
FieldImage decode_pgm16(std::span<const std::uint8_t> bytes);
void write_pgm16(const std::filesystem::path& path, const FieldImage& image);

/// One image row per CSV line, full double precision.
std::string encode_image_csv(const FieldImage& image);
FieldImage decode_image_csv(const std::string& text);
void write_image_csv(const std::filesystem::path& path, const FieldImage& image);
FieldImage read_image_csv(const std::filesystem::path& path);

/// A single CSV row of numbers (a measured line).
std::vector<double> read_line_csv(const std::filesystem::path& path);

}  // namespace tw::io
