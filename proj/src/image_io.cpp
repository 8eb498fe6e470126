#include "tunnelwave/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tunnelwave/binary_io.hpp"
#include "tunnelwave/errors.hpp"

namespace tw::io {

namespace {

std::vector<double> parse_csv_numbers(std::string_view line, std::size_t line_no) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= line.size()) {
    std::size_t end = line.find(',', pos);
    if (end == std::string_view::npos) end = line.size();
    std::string_view field = line.substr(pos, end - pos);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
      field.remove_suffix(1);
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || ec != std::errc() || ptr != field.data() + field.size()) {
      throw DataError("CSV line " + std::to_string(line_no) + ": '" + std::string(field) + "' is not a number");
    }
    out.push_back(v);
    pos = end + 1;
  }
  return out;
}

std::vector<std::string_view> nonblank_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view l = text.substr(pos, end - pos);
    if (l.find_first_not_of(" \t\r") != std::string_view::npos) lines.push_back(l);
    pos = end + 1;
  }
  return lines;
}

}  // namespace

std::vector<std::uint8_t> encode_pgm16(const FieldImage& image) {
  const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n65535\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + 2 * image.size());
  for (double v : image.values) {
    const double c = std::isfinite(v) ? std::clamp(v, 0.0, 1.0) : 0.0;
    const auto s = static_cast<std::uint16_t>(std::lround(65535.0 * c));
    out.push_back(static_cast<std::uint8_t>(s >> 8));
    out.push_back(static_cast<std::uint8_t>(s & 0xff));
  }
  return out;
}

FieldImage decode_pgm16(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    return t;
  };
  if (token() != "P5") throw FormatError(FormatErrorKind::bad_magic, "not a binary graymap");
  std::size_t w = 0;
  std::size_t h = 0;
  unsigned long maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw FormatError(FormatErrorKind::truncated_payload, "graymap header is incomplete");
  }
  if (maxval != 65535) throw FormatError(FormatErrorKind::unsupported_version, "graymap max value must be 65535");
  ++pos;  // single whitespace after maxval
  if (bytes.size() < pos + 2 * w * h) throw FormatError(FormatErrorKind::truncated_payload, "graymap payload is short");
  FieldImage img(h, w);
  for (std::size_t i = 0; i < w * h; ++i) {
    const unsigned s = (static_cast<unsigned>(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
    img.values[i] = static_cast<double>(s) / 65535.0;
  }
  return img;
}

void write_pgm16(const std::filesystem::path& path, const FieldImage& image) {
  write_file_atomic(path, encode_pgm16(image));
}

std::string encode_image_csv(const FieldImage& image) {
  std::string out;
  char buf[40];
  for (std::size_t r = 0; r < image.height; ++r) {
    for (std::size_t c = 0; c < image.width; ++c) {
      std::snprintf(buf, sizeof buf, c == 0 ? "%.17g" : ",%.17g", image.at(r, c));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

FieldImage decode_image_csv(const std::string& text) {
  const auto lines = nonblank_lines(text);
  if (lines.empty()) throw DataError("image CSV is empty");
  FieldImage img;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto row = parse_csv_numbers(lines[i], i + 1);
    if (i == 0) img.width = row.size();
    if (row.size() != img.width) throw DataError("image CSV line " + std::to_string(i + 1) + " has a different width");
    img.values.insert(img.values.end(), row.begin(), row.end());
  }
  img.height = lines.size();
  return img;
}

void write_image_csv(const std::filesystem::path& path, const FieldImage& image) {
  write_file_atomic(path, std::string_view(encode_image_csv(image)));
}

FieldImage read_image_csv(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_image_csv(std::string(bytes.begin(), bytes.end()));
}

std::vector<double> read_line_csv(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const std::string text(bytes.begin(), bytes.end());
  const auto lines = nonblank_lines(text);
  if (lines.size() != 1) throw DataError("line CSV must hold exactly one row, found " + std::to_string(lines.size()));
  return parse_csv_numbers(lines[0], 1);
}

}  // namespace tw::io
