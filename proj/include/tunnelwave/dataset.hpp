#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "tunnelwave/field_image.hpp"
#include "tunnelwave/pwe.hpp"

namespace tw::data {

/// Line-retention curriculum: rho falls linearly from rho_init to rho_final
/// over t_prog epochs and stays at rho_final afterwards.
struct ProgressiveSchedule {
  double rho_init = 0.2;
  double rho_final = 0.01;
  double t_prog = 100.0;

  void validate() const;
};

double progressive_rho(double epoch, const ProgressiveSchedule& sched);

/// max(1, round(rho * n_rows)).
std::size_t retained_row_count(double rho, std::size_t n_rows);

/// Independent generator for one (seed, a, b) key, e.g. (seed, epoch, sample).
std::mt19937_64 keyed_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Picks retained_row_count(rho, n_rows) distinct rows, always including
/// `source_row`; the rest are uniform without replacement. Sorted ascending.
std::vector<std::size_t> sample_rows(double rho, std::size_t n_rows, std::size_t source_row, std::mt19937_64& rng);

struct SampleMeta {
  double frequency_hz = 0.0;
  double sigma_s_per_m = 0.0;
  double source_height_m = 0.0;
  double floor_db = pwe::kDefaultFloorDb;

  bool operator==(const SampleMeta&) const = default;
};

/// Two-channel conditioning input (mask, masked data) plus its dense target.
struct SparseSample {
  FieldImage mask;
  FieldImage data;
  std::optional<FieldImage> target;  // absent for field measurements
  std::size_t source_row = 0;
  std::vector<std::size_t> rows;
  SampleMeta meta;
};

SparseSample make_sparse_sample(const FieldImage& target, std::span<const std::size_t> rows, std::size_t source_row,
                                const SampleMeta& meta);

/// Wraps one measured, already-normalized line as a single-row generator input.
SparseSample inference_line_input(std::span<const double> measured_line, std::size_t row, std::size_t height,
                                  std::size_t width);

struct DatasetSample {
  SampleMeta meta;
  std::uint32_t source_row = 0;
  std::vector<std::uint32_t> observed_rows;
  FieldImage target;

  bool operator==(const DatasetSample&) const = default;
};

struct Dataset {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  double floor_db = pwe::kDefaultFloorDb;
  std::vector<DatasetSample> samples;

  bool operator==(const Dataset&) const = default;
};

struct Range {
  double min = 0.0;
  double max = 0.0;
};

inline constexpr double kMinDatasetFrequencyHz = 0.9e9;
inline constexpr double kMaxDatasetFrequencyHz = 5.8e9;

struct GenerationConfig {
  pwe::TunnelEnvironment environment;  // grid, eps_r, mu_r, polarization; freq/sigma are drawn
  Range frequency_hz{kMinDatasetFrequencyHz, kMaxDatasetFrequencyHz};
  Range sigma_s_per_m{0.001, 0.1};          // sampled log-uniformly
  std::optional<Range> source_height_m;     // default: mid-height
  double floor_db = pwe::kDefaultFloorDb;
  std::size_t n_samples = 1;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: TW_THREADS, else hardware concurrency

  void validate() const;
};

struct DrawnParameters {
  double frequency_hz;
  double sigma_s_per_m;
  double source_height_m;
};

/// Parameters of sample `index`, drawn from the stream keyed by (seed, index).
DrawnParameters draw_parameters(const GenerationConfig& config, std::size_t index);

Dataset generate_dataset(const GenerationConfig& config);

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
Dataset decode_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& path);

/// SparseSample whose observed rows are the ones stored with the sample.
SparseSample stored_sparse_sample(const Dataset& dataset, std::size_t index);

enum class Split { train, validation, all };

/// Deterministic hash split: an index is held out when its hash falls below
/// `validation_fraction`.
bool is_validation_index(std::size_t index, double validation_fraction);
std::vector<std::size_t> split_indices(std::size_t n_samples, double validation_fraction, Split split);

/// TW_THREADS when set and positive, otherwise the hardware concurrency.
unsigned default_thread_count();

}  // namespace tw::data
