#include <doctest.h>

#include <cmath>
#include <set>

#include "tunnelwave/dataset.hpp"
#include "tunnelwave/errors.hpp"

using namespace tw;
using namespace tw::data;

namespace {

GenerationConfig tiny_config(std::size_t n = 4) {
  GenerationConfig c;
  c.environment.length_m = 60.0;
  c.environment.height_m = 7.75;
  c.environment.delta_range_m = 2.0;
  c.environment.delta_height_m = 0.25;
  c.n_samples = n;
  c.seed = 11;
  c.threads = 1;
  return c;
}

}  // namespace

TEST_CASE("progressive schedule endpoints and shape") {
  const ProgressiveSchedule s{0.2, 0.01, 100};
  CHECK(progressive_rho(0, s) == 0.2);
  CHECK(progressive_rho(100, s) == 0.01);
  CHECK(progressive_rho(250, s) == 0.01);
  CHECK(progressive_rho(50, s) == doctest::Approx(0.105));
  for (int t = 1; t <= 100; ++t) CHECK(progressive_rho(t, s) <= progressive_rho(t - 1, s));
  CHECK_THROWS_AS((ProgressiveSchedule{0.01, 0.2, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((ProgressiveSchedule{0.2, 0.0, 10}.validate()), ConfigError);
  CHECK_THROWS_AS((ProgressiveSchedule{0.2, 0.1, 0}.validate()), ConfigError);
}

TEST_CASE("retained row count") {
  CHECK(retained_row_count(0.2, 101) == 20);
  CHECK(retained_row_count(0.01, 101) == 1);
  CHECK(retained_row_count(0.001, 101) == 1);
  CHECK(retained_row_count(0.2, 32) == 6);
  CHECK(retained_row_count(1.0, 32) == 32);
}

TEST_CASE("row sampling") {
  auto rng = keyed_rng(1, 2, 3);
  const auto rows = sample_rows(0.2, 101, 50, rng);
  CHECK(rows.size() == 20);
  CHECK(std::is_sorted(rows.begin(), rows.end()));
  CHECK(std::set<std::size_t>(rows.begin(), rows.end()).size() == rows.size());
  CHECK(std::find(rows.begin(), rows.end(), 50) != rows.end());
  auto rng2 = keyed_rng(1, 2, 3);
  CHECK(sample_rows(0.2, 101, 50, rng2) == rows);
  auto rng3 = keyed_rng(1, 2, 4);
  CHECK(sample_rows(0.2, 101, 50, rng3) != rows);
  auto rng4 = keyed_rng(1, 2, 3);
  CHECK(sample_rows(0.01, 101, 7, rng4) == std::vector<std::size_t>{7});
  CHECK_THROWS_AS(sample_rows(0.2, 10, 10, rng), ConfigError);
}

TEST_CASE("sparse sample assembly") {
  FieldImage target(4, 3);
  for (std::size_t i = 0; i < target.size(); ++i) target.values[i] = 0.1 * static_cast<double>(i);
  const std::vector<std::size_t> rows{2, 0};
  const auto s = make_sparse_sample(target, rows, 2, {});
  CHECK(s.rows == std::vector<std::size_t>{0, 2});
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 3; ++c) {
      const bool kept = r == 0 || r == 2;
      CHECK(s.mask.at(r, c) == (kept ? 1.0 : 0.0));
      CHECK(s.data.at(r, c) == (kept ? target.at(r, c) : 0.0));
    }
  }
  const std::vector<double> line{0.5, 0.6, 0.7};
  const auto inf = inference_line_input(line, 1, 4, 3);
  CHECK(inf.data.at(1, 2) == 0.7);
  CHECK(inf.mask.at(0, 0) == 0.0);
  CHECK(!inf.target.has_value());
  CHECK_THROWS_AS(inference_line_input(line, 1, 4, 4), DataError);
  CHECK_THROWS_AS(inference_line_input(line, 4, 4, 3), ConfigError);
}

TEST_CASE("parameter draws stay in range and are keyed by index") {
  auto c = tiny_config(50);
  for (std::size_t i = 0; i < 50; ++i) {
    const auto p = draw_parameters(c, i);
    CHECK(p.frequency_hz >= 0.9e9);
    CHECK(p.frequency_hz <= 5.8e9);
    CHECK(p.sigma_s_per_m >= 0.001);
    CHECK(p.sigma_s_per_m <= 0.1);
    CHECK(p.source_height_m == doctest::Approx(c.environment.height_m / 2));
  }
  CHECK(draw_parameters(c, 3).frequency_hz == draw_parameters(c, 3).frequency_hz);
  c.frequency_hz = {2e9, 2e9};
  c.sigma_s_per_m = {0.02, 0.02};
  CHECK(draw_parameters(c, 5).frequency_hz == 2e9);
  CHECK(draw_parameters(c, 5).sigma_s_per_m == 0.02);
  c.frequency_hz = {0.5e9, 1e9};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("conductivity is sampled log-uniformly") {
  auto c = tiny_config(2000);
  std::size_t below = 0;
  for (std::size_t i = 0; i < 2000; ++i) below += draw_parameters(c, i).sigma_s_per_m < 0.01;
  // log10 midpoint of [0.001, 0.1] is 0.01: about half the draws fall below.
  CHECK(below > 900);
  CHECK(below < 1100);
}

TEST_CASE("generated datasets are deterministic across thread counts") {
  auto c = tiny_config(5);
  const auto a = generate_dataset(c);
  c.threads = 3;
  const auto b = generate_dataset(c);
  CHECK(a == b);
  CHECK(encode_dataset(a) == encode_dataset(b));
  REQUIRE(a.samples.size() == 5);
  CHECK(a.height == 32);
  CHECK(a.width == 31);
  for (const auto& s : a.samples) {
    CHECK(s.target.is_normalized());
    CHECK(s.source_row == 16);
    CHECK(s.observed_rows == std::vector<std::uint32_t>{16});
    for (double v : s.target.values) CHECK(static_cast<double>(static_cast<float>(v)) == v);
  }
}

TEST_CASE("dataset container round trip and corruption") {
  const auto ds = generate_dataset(tiny_config(3));
  const auto bytes = encode_dataset(ds);
  CHECK(decode_dataset(bytes) == ds);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "TWD1");

  auto kind_of = [](std::vector<std::uint8_t> b) {
    try {
      decode_dataset(b);
    } catch (const FormatError& e) {
      return e.kind();
    }
    FAIL("decode accepted a corrupted container");
    return FormatErrorKind::io;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == FormatErrorKind::bad_magic);
  auto bad_version = bytes;
  bad_version[4] = 99;
  CHECK(kind_of(bad_version) == FormatErrorKind::unsupported_version);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  CHECK(kind_of(truncated) == FormatErrorKind::truncated_payload);
  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x40;
  CHECK(kind_of(flipped) == FormatErrorKind::checksum_mismatch);
}

TEST_CASE("stored sparse sample uses the stored rows") {
  const auto ds = generate_dataset(tiny_config(2));
  const auto s = stored_sparse_sample(ds, 1);
  CHECK(s.rows == std::vector<std::size_t>{16});
  CHECK(s.target == ds.samples[1].target);
}

TEST_CASE("hash split partitions indices") {
  const auto train = split_indices(200, 0.25, Split::train);
  const auto val = split_indices(200, 0.25, Split::validation);
  CHECK(train.size() + val.size() == 200);
  CHECK(val.size() > 30);
  CHECK(val.size() < 70);
  for (auto i : val) CHECK(std::find(train.begin(), train.end(), i) == train.end());
  CHECK(split_indices(10, 0.0, Split::validation).empty());
  CHECK(split_indices(10, 0.3, Split::all).size() == 10);
}
