#include "tunnelwave/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>
#include <stdexcept>

#include "tunnelwave/errors.hpp"

namespace tw::metrics {

namespace {

void require_match(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  }
  if (a.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

void require_same_dims(const FieldImage& a, const FieldImage& b) {
  if (a.height != b.height || a.width != b.width) {
    throw DataError("image size mismatch: " + std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " +
                    std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

double mae(std::span<const double> y_hat, std::span<const double> y) {
  require_match(y_hat, y, "mae");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs(y_hat[i] - y[i]);
  return s / static_cast<double>(y.size());
}

double rmse(std::span<const double> y_hat, std::span<const double> y) {
  require_match(y_hat, y, "rmse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y_hat[i] - y[i]) * (y_hat[i] - y[i]);
  return std::sqrt(s / static_cast<double>(y.size()));
}

double rel_error_percent(std::span<const double> y_hat, std::span<const double> y) {
  require_match(y_hat, y, "rel_error_percent");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
    den += y[i] * y[i];
  }
  if (!(den > 0.0)) throw DataError("relative error needs a reference with nonzero norm");
  return 100.0 * std::sqrt(num) / std::sqrt(den);
}

std::vector<LineMetrics> line_profile_compare(const FieldImage& pred, const FieldImage& target,
                                              std::span<const std::size_t> rows) {
  require_same_dims(pred, target);
  std::vector<LineMetrics> out;
  for (std::size_t r : rows) {
    if (r >= target.height) throw std::out_of_range("row " + std::to_string(r) + " outside the image");
    out.push_back({r, rmse(pred.row(r), target.row(r)), mae(pred.row(r), target.row(r))});
  }
  return out;
}

std::string format_rmse(const std::string& label, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, " RMSE: %.6f", value);
  return label + buf;
}

std::vector<double> power_profile_db(const FieldImage& image, std::size_t row, double floor_db) {
  if (!(floor_db < 0.0)) throw ConfigError("floor_db must be negative");
  if (row >= image.height) throw std::out_of_range("row " + std::to_string(row) + " outside the image");
  std::vector<double> db;
  db.reserve(image.width);
  for (double v : image.row(row)) db.push_back(floor_db * (1.0 - v));
  return db;
}

double alignment_offset(std::span<const double> curve, std::span<const double> reference) {
  require_match(curve, reference, "alignment_offset");
  double s = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) s += reference[i] - curve[i];
  return s / static_cast<double>(curve.size());
}

std::vector<double> offset_aligned(std::span<const double> curve, std::span<const double> reference) {
  const double off = alignment_offset(curve, reference);
  std::vector<double> out(curve.begin(), curve.end());
  for (double& v : out) v += off;
  return out;
}

std::string profile_csv(std::span<const double> range_m, std::span<const double> pred_db,
                        std::span<const double> target_db) {
  require_match(range_m, pred_db, "profile_csv");
  require_match(range_m, target_db, "profile_csv");
  std::string out = "range_m,pred_db,target_db\n";
  for (std::size_t i = 0; i < range_m.size(); ++i) {
    out += fmt(range_m[i]) + "," + fmt(pred_db[i]) + "," + fmt(target_db[i]) + "\n";
  }
  return out;
}

SampleMetrics evaluate_sample(std::size_t index, const FieldImage& pred, const FieldImage& target) {
  require_same_dims(pred, target);
  return {index, mae(pred.values, target.values), rmse(pred.values, target.values),
          rel_error_percent(pred.values, target.values)};
}

EvalReport summarize(std::vector<SampleMetrics> samples) {
  EvalReport r;
  r.samples = std::move(samples);
  if (r.samples.empty()) return r;
  auto agg = [&](auto field) {
    Aggregate a;
    for (const auto& s : r.samples) {
      a.mean += s.*field;
      a.max = std::max(a.max, s.*field);
    }
    a.mean /= static_cast<double>(r.samples.size());
    return a;
  };
  r.mae = agg(&SampleMetrics::mae);
  r.rmse = agg(&SampleMetrics::rmse);
  r.rel_error_percent = agg(&SampleMetrics::rel_error_percent);
  return r;
}

std::string to_csv(const EvalReport& report) {
  std::string out = "sample,mae,rmse,rel_error_percent\n";
  for (const auto& s : report.samples) {
    out += std::to_string(s.index) + "," + fmt(s.mae) + "," + fmt(s.rmse) + "," + fmt(s.rel_error_percent) + "\n";
  }
  return out;
}

std::string lines_csv(const EvalReport& report) {
  std::string out = "sample,row,rmse,mae\n";
  for (const auto& t : report.line_tables) {
    for (const auto& l : t.lines) {
      out += std::to_string(t.sample) + "," + std::to_string(l.row) + "," + fmt(l.rmse) + "," + fmt(l.mae) + "\n";
    }
  }
  return out;
}

std::string to_json(const EvalReport& report) {
  nlohmann::json j;
  j["samples"] = nlohmann::json::array();
  for (const auto& s : report.samples) {
    j["samples"].push_back(
        {{"index", s.index}, {"mae", s.mae}, {"rmse", s.rmse}, {"rel_error_percent", s.rel_error_percent}});
  }
  auto agg = [](const Aggregate& a) { return nlohmann::json{{"mean", a.mean}, {"max", a.max}}; };
  j["mae"] = agg(report.mae);
  j["rmse"] = agg(report.rmse);
  j["rel_error_percent"] = agg(report.rel_error_percent);
  j["line_tables"] = nlohmann::json::array();
  for (const auto& t : report.line_tables) {
    nlohmann::json lines = nlohmann::json::array();
    for (const auto& l : t.lines) lines.push_back({{"row", l.row}, {"rmse", l.rmse}, {"mae", l.mae}});
    j["line_tables"].push_back({{"sample", t.sample}, {"lines", lines}});
  }
  return j.dump(2) + "\n";
}

}  // namespace tw::metrics
