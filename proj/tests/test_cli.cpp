#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "toy.hpp"
#include "tunnelwave/binary_io.hpp"
#include "tunnelwave/image_io.hpp"

namespace fs = std::filesystem;
using tw::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("tw_cli_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> toy_grid() {
  return {"--length-m", "62", "--height-m", "3.75", "--dz", "2", "--dx", "0.25"};
}

std::vector<std::string> generate_args(const fs::path& out, const std::string& n) {
  std::vector<std::string> a{"generate-dataset", "--out", out.string(), "--n-samples", n, "--seed", "3", "--threads", "1"};
  const auto g = toy_grid();
  a.insert(a.end(), g.begin(), g.end());
  return a;
}

}  // namespace

TEST_CASE("usage errors") {
  CHECK(call({"--help"}).code == 0);
  CHECK(call({"train", "--help"}).code == 0);
  CHECK(call({}).code == 2);
  CHECK(call({"frobnicate"}).code == 2);
  CHECK(call({"generate-dataset", "--out", "x.twd", "--bogus"}).code == 2);
  CHECK(call({"evaluate", "--split", "test", "--checkpoint", "a", "--data", "b", "--out", "c"}).code == 2);
  const auto bad_grid = call({"generate-dataset", "--out", "/tmp/never.twd", "--dx", "-1"});
  CHECK(bad_grid.code == 2);
  CHECK_FALSE(bad_grid.err.empty());
}

TEST_CASE("missing or corrupt inputs are data failures") {
  const auto dir = scratch("missing");
  std::ofstream(dir / "cfg.json") << R"({"epochs": 1})";
  CHECK(call({"train", "--config", (dir / "cfg.json").string(), "--data", (dir / "nope.twd").string(), "--out",
              (dir / "o").string()})
            .code == 3);
  std::ofstream(dir / "junk.twd") << "not a dataset";
  CHECK(call({"export-image", "--data", (dir / "junk.twd").string(), "--out", (dir / "x").string()}).code == 3);
  CHECK(call({"train", "--config", (dir / "absent.json").string(), "--data", "x", "--out", (dir / "o").string()})
            .code == 2);
  std::ofstream(dir / "bad.json") << R"({"epochs": 1, "learning_rate": 3})";
  CHECK(call({"train", "--config", (dir / "bad.json").string(), "--data", "x", "--out", (dir / "o").string()}).code ==
        2);
  fs::remove_all(dir);
}

TEST_CASE("solver self-checks") {
  const auto dir = scratch("validate");
  const auto r = call({"validate-pwe", "--case", "energy", "--out", (dir / "energy.json").string()});
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "energy.json"));
  CHECK(call({"validate-pwe", "--case", "free-space-beam"}).code == 0);
  fs::remove_all(dir);
}

TEST_CASE("end to end on a toy dataset") {
  const auto dir = scratch("e2e");
  const auto a = dir / "a.twd";
  const auto b = dir / "b.twd";
  REQUIRE(call(generate_args(a, "4")).code == 0);
  REQUIRE(call(generate_args(b, "4")).code == 0);
  CHECK(slurp(a) == slurp(b));

  const auto one = call(generate_args(dir / "one.twd", "1"));
  CHECK(one.code == 0);
  CHECK(tw::data::read_dataset(dir / "one.twd").samples.size() == 1);

  REQUIRE(call({"export-image", "--data", a.string(), "--index", "2", "--out", (dir / "img").string()}).code == 0);
  const auto img = tw::io::read_image_csv(dir / "img.csv");
  CHECK(img.height == 16);
  CHECK(img.width == 32);
  CHECK(img == tw::data::read_dataset(a).samples[2].target);
  CHECK(fs::file_size(dir / "img.pgm") > 16 * 32 * 2);
  CHECK(call({"export-image", "--image", (dir / "img.csv").string(), "--out", (dir / "again").string()}).code == 0);
  CHECK(slurp(dir / "again.pgm") == slurp(dir / "img.pgm"));
  CHECK(call({"export-image", "--data", a.string(), "--index", "9", "--out", (dir / "x").string()}).code == 2);

  auto cfg = toy::config(2);
  cfg.checkpoint_every = 1;
  std::ofstream(dir / "train.json") << tw::train::to_json_string(cfg);

  const auto t1 = call({"train", "--config", (dir / "train.json").string(), "--data", a.string(), "--out",
                        (dir / "run1").string()});
  REQUIRE(t1.code == 0);
  CHECK(fs::exists(dir / "run1" / "final.twc"));
  CHECK(fs::exists(dir / "run1" / "config.json"));
  const auto t2 = call({"train", "--config", (dir / "train.json").string(), "--data", a.string(), "--out",
                        (dir / "run2").string()});
  REQUIRE(t2.code == 0);
  CHECK(slurp(dir / "run1" / "final.twc") == slurp(dir / "run2" / "final.twc"));

  // Resuming from the epoch-1 checkpoint reproduces the uninterrupted run.
  const auto t3 = call({"train", "--config", (dir / "train.json").string(), "--data", a.string(), "--out",
                        (dir / "run3").string(), "--resume", (dir / "run1" / "epoch_0001.twc").string()});
  REQUIRE(t3.code == 0);
  CHECK(slurp(dir / "run3" / "final.twc") == slurp(dir / "run1" / "final.twc"));

  const auto ckpt = (dir / "run1" / "final.twc").string();
  const auto ev = call({"evaluate", "--checkpoint", ckpt, "--data", a.string(), "--split", "all", "--out",
                        (dir / "eval").string()});
  REQUIRE(ev.code == 0);
  CHECK(ev.out.find("Inc-GAN RMSE: ") != std::string::npos);
  CHECK(fs::exists(dir / "eval" / "eval.json"));
  CHECK(fs::exists(dir / "eval" / "lines.csv"));
  CHECK(call({"evaluate", "--checkpoint", ckpt, "--data", a.string(), "--split", "val", "--out",
              (dir / "eval2").string()})
            .code == 3);

  // One measured line, taken from a stored target.
  {
    const auto ds = tw::data::read_dataset(a);
    std::ofstream line(dir / "line.csv");
    const auto row = ds.samples[0].target.row(ds.samples[0].source_row);
    for (std::size_t i = 0; i < row.size(); ++i) line << (i ? "," : "") << row[i];
    line << "\n";
  }
  std::vector<std::string> rec{"reconstruct", "--checkpoint", ckpt, "--line", (dir / "line.csv").string(),
                               "--row", "8", "--out", (dir / "rec.csv").string(), "--timing", "--compare-pwe"};
  const auto g = toy_grid();
  rec.insert(rec.end(), g.begin(), g.end());
  const auto r = call(rec);
  REQUIRE(r.code == 0);
  CHECK(r.out.find("generator_seconds ") != std::string::npos);
  CHECK(r.out.find("pwe_seconds ") != std::string::npos);
  CHECK(r.out.find("speedup ") != std::string::npos);
  const auto out_img = tw::io::read_image_csv(dir / "rec.csv");
  CHECK(out_img.height == 16);
  CHECK(out_img.width == 32);
  for (double v : out_img.values) CHECK(v >= 0.0);
  CHECK(call({"reconstruct", "--checkpoint", ckpt, "--line", (dir / "line.csv").string(), "--row", "16", "--out",
              (dir / "r2.csv").string()})
            .code != 0);

  CHECK(call({"gamma-sweep", "--config", (dir / "train.json").string(), "--data", a.string(), "--out",
              (dir / "g.csv").string()})
            .code == 2);
  fs::remove_all(dir);
}
