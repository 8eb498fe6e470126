#pragma once

// Error metrics on normalized images, per-line tables and dB profiles.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tunnelwave/field_image.hpp"

namespace tw::metrics {

double mae(std::span<const double> y_hat, std::span<const double> y);
double rmse(std::span<const double> y_hat, std::span<const double> y);

/// 100 * ||y - y_hat|| / ||y||; a zero reference is rejected.
double rel_error_percent(std::span<const double> y_hat, std::span<const double> y);

struct LineMetrics {
  std::size_t row = 0;
  double rmse = 0.0;
  double mae = 0.0;
};

std::vector<LineMetrics> line_profile_compare(const FieldImage& pred, const FieldImage& target,
                                              std::span<const std::size_t> rows);

/// "<label> RMSE: 0.007238"
std::string format_rmse(const std::string& label, double value);

/// Inverse of the image normalization: dB = floor_db * (1 - v).
std::vector<double> power_profile_db(const FieldImage& image, std::size_t row, double floor_db);

/// Least-squares constant shift that maps `curve` onto `reference`.
double alignment_offset(std::span<const double> curve, std::span<const double> reference);
std::vector<double> offset_aligned(std::span<const double> curve, std::span<const double> reference);

/// CSV with columns range_m,pred_db,target_db.
std::string profile_csv(std::span<const double> range_m, std::span<const double> pred_db,
                        std::span<const double> target_db);

struct SampleMetrics {
  std::size_t index = 0;
  double mae = 0.0;
  double rmse = 0.0;
  double rel_error_percent = 0.0;
};

SampleMetrics evaluate_sample(std::size_t index, const FieldImage& pred, const FieldImage& target);

struct Aggregate {
  double mean = 0.0;
  double max = 0.0;
};

struct EvalReport {
  std::vector<SampleMetrics> samples;
  Aggregate mae;
  Aggregate rmse;
  Aggregate rel_error_percent;

  struct LineTable {
    std::size_t sample = 0;
    std::vector<LineMetrics> lines;
  };
  std::vector<LineTable> line_tables;
};

/// Fills the aggregates from `samples`; empty input leaves them at zero.
EvalReport summarize(std::vector<SampleMetrics> samples);

std::string to_csv(const EvalReport& report);
std::string lines_csv(const EvalReport& report);
std::string to_json(const EvalReport& report);

}  // namespace tw::metrics
