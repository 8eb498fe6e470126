#include "tunnelwave/checkpoint.hpp"

#include <algorithm>

#include "tunnelwave/binary_io.hpp"
#include "tunnelwave/errors.hpp"

namespace tw::ckpt {

namespace {
constexpr char kMagic[] = "TWC1";
constexpr std::uint32_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode(std::span<const NamedArray> arrays) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put_u32(kVersion);
  w.put_u32(static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.name.size() > 0xffff) throw DataError("tensor name too long: " + a.name.substr(0, 32) + "...");
    if (a.shape.size() > 0xff) throw DataError("tensor rank too large for " + a.name);
    if (ad::numel(a.shape) != a.values.size()) throw DataError("tensor " + a.name + " has inconsistent shape");
    w.put_u16(static_cast<std::uint16_t>(a.name.size()));
    w.put_bytes(a.name);
    w.put_u8(static_cast<std::uint8_t>(a.shape.size()));
    for (auto d : a.shape) w.put_u32(static_cast<std::uint32_t>(d));
    for (double v : a.values) w.put_f64(v);
  }
  w.put_crc();
  return w.bytes();
}

std::vector<NamedArray> decode(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw FormatError(FormatErrorKind::truncated_payload, "file shorter than the magic");
  io::ByteReader r(bytes);
  if (r.get_bytes(4) != std::string_view(kMagic, 4)) throw FormatError(FormatErrorKind::bad_magic, "expected TWC1");
  const std::uint32_t version = r.get_u32();
  if (version != kVersion) {
    throw FormatError(FormatErrorKind::unsupported_version, "checkpoint version " + std::to_string(version));
  }
  const std::uint32_t n = r.get_u32();
  std::vector<NamedArray> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedArray a;
    a.name = r.get_bytes(r.get_u16());
    const std::uint8_t rank = r.get_u8();
    a.shape.resize(rank);
    for (auto& d : a.shape) d = r.get_u32();
    const std::size_t count = ad::numel(a.shape);
    if (count > r.remaining() / 8) throw FormatError(FormatErrorKind::truncated_payload, "payload of " + a.name);
    a.values.resize(count);
    for (double& v : a.values) v = r.get_f64();
    out.push_back(std::move(a));
  }
  if (r.remaining() < 4) throw FormatError(FormatErrorKind::truncated_payload, "missing checksum");
  io::verify_crc(bytes.first(r.position() + 4));
  if (r.remaining() != 4) throw DataError("trailing bytes after the checkpoint checksum");
  return out;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays) {
  io::write_file_atomic(path, encode(arrays));
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) { return decode(io::read_file(path)); }

ArrayMap::ArrayMap(std::vector<NamedArray> arrays) : arrays_(std::move(arrays)) {
  for (std::size_t i = 0; i < arrays_.size(); ++i) {
    if (!index_.emplace(arrays_[i].name, i).second) throw DataError("duplicate tensor name " + arrays_[i].name);
  }
}

const NamedArray& ArrayMap::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("checkpoint lacks tensor " + name);
  return arrays_[it->second];
}

void ArrayMap::copy_into(const std::string& name, ad::Tensor& dst) const {
  const NamedArray& a = at(name);
  if (a.shape != dst.shape()) {
    throw DataError("tensor " + name + " has shape " + ad::shape_string(a.shape) + ", model expects " +
                    ad::shape_string(dst.shape()));
  }
  std::copy(a.values.begin(), a.values.end(), dst.mutable_values().begin());
}

double ArrayMap::scalar(const std::string& name) const {
  const NamedArray& a = at(name);
  if (a.values.size() != 1) throw DataError("tensor " + name + " is not a scalar");
  return a.values[0];
}

}  // namespace tw::ckpt
