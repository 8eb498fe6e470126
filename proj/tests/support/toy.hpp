#pragma once

// Small fixtures shared by the trainer, CLI and acceptance tests.

#include <memory>

#include "tunnelwave/dataset.hpp"
#include "tunnelwave/trainer.hpp"

namespace toy {

// 16 rows x 32 columns.
inline tw::data::GenerationConfig generation(std::size_t n, std::uint64_t seed = 5) {
  tw::data::GenerationConfig c;
  c.environment.length_m = 62.0;
  c.environment.height_m = 3.75;
  c.environment.delta_range_m = 2.0;
  c.environment.delta_height_m = 0.25;
  c.n_samples = n;
  c.seed = seed;
  c.threads = 1;
  return c;
}

inline std::shared_ptr<const tw::data::Dataset> dataset(std::size_t n, std::uint64_t seed = 5) {
  return std::make_shared<const tw::data::Dataset>(tw::data::generate_dataset(generation(n, seed)));
}

inline tw::train::TrainConfig config(std::size_t epochs = 3) {
  tw::train::TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 2;
  c.lr_g = 1e-3;
  c.lr_d = 1e-3;
  c.base_channels = 8;
  c.max_channels = 16;
  c.disc_channels = {8, 8, 8};
  c.validation_fraction = 0.0;
  c.seed = 42;
  return c;
}

}  // namespace toy
