#include "tunnelwave/dataset.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>

#include "tunnelwave/binary_io.hpp"
#include "tunnelwave/errors.hpp"

namespace tw::data {

namespace {

constexpr char kMagic[] = "TWD1";
constexpr std::uint32_t kVersion = 1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

double uniform_in(const Range& r, std::mt19937_64& rng) {
  const double u = std::generate_canonical<double, 53>(rng);
  if (r.min == r.max) return r.min;
  return r.min + (r.max - r.min) * u;
}

double log_uniform_in(const Range& r, std::mt19937_64& rng) {
  const double u = std::generate_canonical<double, 53>(rng);
  if (r.min == r.max) return r.min;
  return std::exp(std::log(r.min) + (std::log(r.max) - std::log(r.min)) * u);
}

}  // namespace

void ProgressiveSchedule::validate() const {
  if (!(rho_init > 0.0 && rho_init <= 1.0) || !(rho_final > 0.0 && rho_final <= 1.0)) {
    throw ConfigError("line retention ratios must lie in (0, 1]");
  }
  if (rho_init < rho_final) throw ConfigError("rho_init must be >= rho_final");
  if (!(t_prog >= 1.0)) throw ConfigError("t_prog must be >= 1 epoch");
}

double progressive_rho(double epoch, const ProgressiveSchedule& sched) {
  if (epoch >= sched.t_prog) return sched.rho_final;
  return sched.rho_init - (sched.rho_init - sched.rho_final) * epoch / sched.t_prog;
}

std::size_t retained_row_count(double rho, std::size_t n_rows) {
  const auto k = static_cast<std::size_t>(std::llround(rho * static_cast<double>(n_rows)));
  return std::clamp<std::size_t>(k, 1, n_rows);
}

std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto lo = [](std::uint64_t v) { return static_cast<std::uint32_t>(v); };
  auto hi = [](std::uint64_t v) { return static_cast<std::uint32_t>(v >> 32); };
  std::seed_seq seq{lo(seed), hi(seed), lo(a), hi(a), lo(b), hi(b), 0x7457u};
  return std::mt19937_64(seq);
}

std::vector<std::size_t> sample_rows(double rho, std::size_t n_rows, std::size_t source_row, std::mt19937_64& rng) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("retention ratio must lie in (0, 1]");
  if (source_row >= n_rows) throw ConfigError("source row outside the image");

  const std::size_t k = retained_row_count(rho, n_rows);
  std::vector<std::size_t> pool;
  pool.reserve(n_rows - 1);
  for (std::size_t r = 0; r < n_rows; ++r) {
    if (r != source_row) pool.push_back(r);
  }
  // Partial Fisher-Yates: the first k-1 slots become the draw.
  for (std::size_t i = 0; i + 1 < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  std::vector<std::size_t> rows(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k - 1));
  rows.push_back(source_row);
  std::sort(rows.begin(), rows.end());
  return rows;
}

SparseSample make_sparse_sample(const FieldImage& target, std::span<const std::size_t> rows, std::size_t source_row,
                                const SampleMeta& meta) {
  if (rows.empty()) throw ConfigError("a sparse sample needs at least one observed row");
  SparseSample s;
  s.mask = FieldImage(target.height, target.width);
  s.data = FieldImage(target.height, target.width);
  for (std::size_t r : rows) {
    if (r >= target.height) throw ConfigError("observed row " + std::to_string(r) + " outside the image");
    for (std::size_t c = 0; c < target.width; ++c) {
      s.mask.at(r, c) = 1.0;
      s.data.at(r, c) = target.at(r, c);
    }
  }
  s.rows.assign(rows.begin(), rows.end());
  std::sort(s.rows.begin(), s.rows.end());
  s.rows.erase(std::unique(s.rows.begin(), s.rows.end()), s.rows.end());
  s.target = target;
  s.source_row = source_row;
  s.meta = meta;
  return s;
}

SparseSample inference_line_input(std::span<const double> measured_line, std::size_t row, std::size_t height,
                                  std::size_t width) {
  if (measured_line.size() != width) {
    throw DataError("measured line has " + std::to_string(measured_line.size()) + " values, expected " +
                    std::to_string(width));
  }
  if (row >= height) throw ConfigError("row " + std::to_string(row) + " outside an image of height " + std::to_string(height));
  SparseSample s;
  s.mask = FieldImage(height, width);
  s.data = FieldImage(height, width);
  for (std::size_t c = 0; c < width; ++c) {
    s.mask.at(row, c) = 1.0;
    s.data.at(row, c) = measured_line[c];
  }
  s.rows = {row};
  s.source_row = row;
  return s;
}

void GenerationConfig::validate() const {
  environment.validate();
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (!(frequency_hz.min <= frequency_hz.max) || frequency_hz.min < kMinDatasetFrequencyHz ||
      frequency_hz.max > kMaxDatasetFrequencyHz) {
    throw ConfigError("dataset frequencies must lie within [0.9, 5.8] GHz");
  }
  if (!(sigma_s_per_m.min > 0.0 && sigma_s_per_m.min <= sigma_s_per_m.max)) {
    throw ConfigError("conductivity range must be positive and ordered (log-uniform sampling)");
  }
  if (source_height_m) {
    if (!(source_height_m->min <= source_height_m->max) || !(source_height_m->min > 0.0) ||
        !(source_height_m->max < environment.height_m)) {
      throw ConfigError("source height range must lie strictly inside the tunnel");
    }
  }
  if (!(floor_db < 0.0)) throw ConfigError("floor_db must be negative");
}

DrawnParameters draw_parameters(const GenerationConfig& config, std::size_t index) {
  auto rng = keyed_rng(config.seed, index, 0x6e6e);
  DrawnParameters p;
  p.frequency_hz = uniform_in(config.frequency_hz, rng);
  p.sigma_s_per_m = log_uniform_in(config.sigma_s_per_m, rng);
  const Range mid{0.5 * config.environment.height_m, 0.5 * config.environment.height_m};
  p.source_height_m = uniform_in(config.source_height_m.value_or(mid), rng);
  return p;
}

unsigned default_thread_count() {
  if (const char* env = std::getenv("TW_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

Dataset generate_dataset(const GenerationConfig& config) {
  config.validate();
  Dataset ds;
  ds.height = static_cast<std::uint32_t>(config.environment.n_height());
  ds.width = static_cast<std::uint32_t>(config.environment.n_range());
  ds.floor_db = to_f32(config.floor_db);
  ds.samples.resize(config.n_samples);

  auto build = [&](std::size_t index) {
    const DrawnParameters p = draw_parameters(config, index);
    pwe::TunnelEnvironment env = config.environment;
    env.frequency_hz = p.frequency_hz;
    env.sigma_s_per_m = p.sigma_s_per_m;
    pwe::SourceSpec src = pwe::default_source(env);
    src.height_m = p.source_height_m;

    DatasetSample& s = ds.samples[index];
    s.target = pwe::to_field_image(pwe::solve(env, src), config.floor_db);
    for (double& v : s.target.values) v = to_f32(v);
    s.meta = {to_f32(p.frequency_hz), to_f32(p.sigma_s_per_m), to_f32(p.source_height_m), ds.floor_db};
    s.source_row = static_cast<std::uint32_t>(pwe::nearest_row(env, p.source_height_m));
    s.observed_rows = {s.source_row};
  };

  const unsigned threads = std::min<std::size_t>(config.threads ? config.threads : default_thread_count(), config.n_samples);
  if (threads <= 1) {
    for (std::size_t i = 0; i < config.n_samples; ++i) build(i);
    return ds;
  }

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < config.n_samples; i = next++) {
          try {
            build(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
  return ds;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.put_bytes(std::string_view(kMagic, 4));
  w.put_u32(kVersion);
  w.put_u32(static_cast<std::uint32_t>(ds.samples.size()));
  w.put_u32(ds.height);
  w.put_u32(ds.width);
  w.put_f32(static_cast<float>(ds.floor_db));
  for (const auto& s : ds.samples) {
    if (s.target.height != ds.height || s.target.width != ds.width) {
      throw DataError("sample target shape does not match the dataset header");
    }
    w.put_f32(static_cast<float>(s.meta.frequency_hz));
    w.put_f32(static_cast<float>(s.meta.sigma_s_per_m));
    w.put_f32(static_cast<float>(s.meta.source_height_m));
    w.put_u32(s.source_row);
    w.put_u32(static_cast<std::uint32_t>(s.observed_rows.size()));
    for (std::uint32_t r : s.observed_rows) w.put_u32(r);
    for (double v : s.target.values) w.put_f32(static_cast<float>(v));
  }
  w.put_crc();
  return w.bytes();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  if (bytes.size() < 4) throw FormatError(FormatErrorKind::truncated_payload, "file shorter than the magic");
  if (r.get_bytes(4) != std::string_view(kMagic, 4)) throw FormatError(FormatErrorKind::bad_magic, "expected TWD1");
  const std::uint32_t version = r.get_u32();
  if (version != kVersion) {
    throw FormatError(FormatErrorKind::unsupported_version, "dataset version " + std::to_string(version));
  }

  Dataset ds;
  const std::uint32_t n = r.get_u32();
  ds.height = r.get_u32();
  ds.width = r.get_u32();
  ds.floor_db = r.get_f32();
  const std::size_t pixels = static_cast<std::size_t>(ds.height) * ds.width;
  // Cheap bound before reserving: each sample needs at least 20 + 4 * pixels bytes.
  if (static_cast<double>(n) * (20.0 + 4.0 * static_cast<double>(pixels)) > static_cast<double>(r.remaining())) {
    throw FormatError(FormatErrorKind::truncated_payload, "header promises more samples than the file holds");
  }
  ds.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    DatasetSample s;
    s.meta.frequency_hz = r.get_f32();
    s.meta.sigma_s_per_m = r.get_f32();
    s.meta.source_height_m = r.get_f32();
    s.meta.floor_db = ds.floor_db;
    s.source_row = r.get_u32();
    const std::uint32_t n_rows = r.get_u32();
    if (static_cast<std::size_t>(n_rows) * 4 > r.remaining()) {
      throw FormatError(FormatErrorKind::truncated_payload, "observed row list runs past the end");
    }
    s.observed_rows.resize(n_rows);
    for (auto& row : s.observed_rows) row = r.get_u32();
    s.target = FieldImage(ds.height, ds.width);
    for (double& v : s.target.values) v = r.get_f32();
    ds.samples.push_back(std::move(s));
  }
  if (r.remaining() < 4) throw FormatError(FormatErrorKind::truncated_payload, "missing checksum");
  io::verify_crc(bytes.first(r.position() + 4));
  if (r.remaining() != 4) throw DataError("trailing bytes after the dataset checksum");

  for (const auto& s : ds.samples) {
    if (s.source_row >= ds.height) throw DataError("source row outside the image");
    for (auto row : s.observed_rows) {
      if (row >= ds.height) throw DataError("observed row outside the image");
    }
    if (!s.target.is_normalized()) throw DataError("target values outside [0, 1]");
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  io::write_file_atomic(path, encode_dataset(dataset));
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

SparseSample stored_sparse_sample(const Dataset& dataset, std::size_t index) {
  const DatasetSample& s = dataset.samples.at(index);
  std::vector<std::size_t> rows(s.observed_rows.begin(), s.observed_rows.end());
  return make_sparse_sample(s.target, rows, s.source_row, s.meta);
}

bool is_validation_index(std::size_t index, double validation_fraction) {
  const double u = static_cast<double>(splitmix64(index) >> 11) * 0x1.0p-53;
  return u < validation_fraction;
}

std::vector<std::size_t> split_indices(std::size_t n_samples, double validation_fraction, Split split) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const bool val = is_validation_index(i, validation_fraction);
    if (split == Split::all || (split == Split::validation) == val) out.push_back(i);
  }
  return out;
}

}  // namespace tw::data
