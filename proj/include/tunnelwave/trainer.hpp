#pragma once

// Deterministic GAN training over a dataset of field images.
//
// Per step: one discriminator update on a detached generator output, then one
// generator update with the discriminator frozen. Observed rows of every
// training sample are re-drawn each epoch from the stream keyed by
// (seed, epoch, sample index); validation always uses the source row alone.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tunnelwave/checkpoint.hpp"
#include "tunnelwave/dataset.hpp"
#include "tunnelwave/losses.hpp"
#include "tunnelwave/metrics.hpp"
#include "tunnelwave/model.hpp"
#include "tunnelwave/optim.hpp"

namespace tw::train {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 4;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double rho_init = 0.2;
  double rho_final = 0.01;
  std::optional<double> t_prog;  // default: max(1, epochs / 2)
  loss::LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::string dataset_path;
  double validation_fraction = 0.1;
  std::size_t base_channels = 64;
  std::size_t max_channels = 256;
  std::vector<std::size_t> disc_channels{32, 64, 128};

  data::ProgressiveSchedule schedule() const;
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Strict parse: unknown keys and wrong types are ConfigErrors. Missing keys
/// keep their defaults.
TrainConfig parse_train_config(std::string_view json_text);
TrainConfig read_train_config(const std::filesystem::path& path);
std::string to_json_string(const TrainConfig& config);

/// FNV-1a over the canonical JSON of every field that shapes the run. The
/// dataset path, checkpoint cadence and epoch count are left out; the
/// resolved t_prog is included.
std::uint64_t config_hash(const TrainConfig& config);

struct StepInfo {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double rho = 0.0;
  std::vector<std::size_t> sample_indices;
  std::vector<std::size_t> mask_row_counts;
  loss::LossReport report;
  double min_generator_output = 0.0;
};

struct EpochSummary {
  std::size_t epoch = 0;
  double rho = 0.0;
  std::size_t steps = 0;
  loss::LossReport mean;  // per-term means over the epoch's steps
  std::optional<double> validation_rel_error_percent;
};

struct Observer {
  std::function<void(const StepInfo&)> on_step;
  std::function<void(const EpochSummary&)> on_epoch;
};

struct Batch {
  ad::Tensor input;      // (N, 2, H, W): mask, masked data
  ad::Tensor condition;  // (N, 1, H, W): masked data
  ad::Tensor target;     // (N, 1, H, W)
};

Batch make_batch(std::span<const data::SparseSample> samples);

/// Generator output for one sample in eval mode without recording a graph.
FieldImage predict(gan::Generator& generator, const data::SparseSample& sample);

/// Single-line (source row) reconstructions of the given samples. When
/// `lines_per_sample` > 0, also records per-line tables for that many rows
/// drawn from the stream keyed by (seed, sample index).
metrics::EvalReport evaluate_single_line(gan::Generator& generator, const data::Dataset& dataset,
                                         std::span<const std::size_t> indices, std::size_t lines_per_sample = 0,
                                         std::uint64_t seed = 0);

class Trainer {
 public:
  Trainer(TrainConfig config, std::shared_ptr<const data::Dataset> dataset);

  /// One D update followed by one G update. Non-finite losses throw NumericError.
  loss::LossReport train_step(std::span<const data::SparseSample> batch);

  /// Trains epoch `epoch()` and advances the counter.
  EpochSummary run_epoch(const Observer& observer = {});

  /// Runs the remaining epochs. With `out_dir`, writes train_log.csv,
  /// epochs.csv, periodic checkpoints and final.twc there.
  std::vector<EpochSummary> run(const Observer& observer = {},
                                const std::optional<std::filesystem::path>& out_dir = std::nullopt);

  std::vector<ckpt::NamedArray> checkpoint_arrays() const;
  void save_checkpoint(const std::filesystem::path& path) const;
  /// Restores a checkpoint written by a run with the same config hash.
  void restore(const ckpt::ArrayMap& arrays);
  void load_checkpoint(const std::filesystem::path& path);

  std::optional<double> validation_error();

  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t global_step() const noexcept { return step_; }
  const TrainConfig& config() const noexcept { return config_; }
  const data::Dataset& dataset() const noexcept { return *dataset_; }
  const std::vector<std::size_t>& train_indices() const noexcept { return train_indices_; }
  const std::vector<std::size_t>& validation_indices() const noexcept { return validation_indices_; }
  gan::Generator& generator() noexcept { return generator_; }
  gan::Discriminator& discriminator() noexcept { return discriminator_; }
  const std::vector<loss::LossReport>& log() const noexcept { return log_; }

 private:
  data::SparseSample training_sample(std::size_t index, double rho) const;
  std::vector<std::size_t> epoch_order() const;
  std::string manifest_json() const;

  TrainConfig config_;
  std::shared_ptr<const data::Dataset> dataset_;
  std::vector<std::size_t> train_indices_;
  std::vector<std::size_t> validation_indices_;
  gan::Generator generator_;
  gan::Discriminator discriminator_;
  ad::Adam opt_g_;
  ad::Adam opt_d_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
  std::vector<loss::LossReport> log_;
  double last_min_output_ = 0.0;
};

/// Generator restored from a checkpoint for inference.
struct InferenceModel {
  gan::Generator generator;
  TrainConfig config;
  std::size_t height = 0;
  std::size_t width = 0;
  double floor_db = 0.0;
};

InferenceModel load_inference_model(const std::filesystem::path& checkpoint);

struct GammaResult {
  double gamma = 0.0;
  double validation_rel_error_percent = 0.0;
};

/// One training run per gamma, identical otherwise.
std::vector<GammaResult> gamma_sweep(const TrainConfig& config, std::shared_ptr<const data::Dataset> dataset,
                                     std::span<const double> gammas, const Observer& observer = {});
std::string gamma_csv(std::span<const GammaResult> rows);

}  // namespace tw::train
