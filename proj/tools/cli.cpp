#include "cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <sstream>

#include "tunnelwave/binary_io.hpp"
#include "tunnelwave/dataset.hpp"
#include "tunnelwave/errors.hpp"
#include "tunnelwave/image_io.hpp"
#include "tunnelwave/metrics.hpp"
#include "tunnelwave/pwe.hpp"
#include "tunnelwave/pwe_validation.hpp"
#include "tunnelwave/trainer.hpp"

namespace tw::cli {

namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct GridFlags {
  double length_m = 500.0;
  double height_m = 50.0;
  double dz = 0.5;
  double dx = 0.5;
  double eps_r = 5.0;
  std::string polarization = "horizontal";

  void add(CLI::App* app) {
    app->add_option("--length-m", length_m, "Tunnel length along range (m)")->capture_default_str();
    app->add_option("--height-m", height_m, "Tunnel cross-section height (m)")->capture_default_str();
    app->add_option("--dz", dz, "Range step (m)")->capture_default_str();
    app->add_option("--dx", dx, "Height step (m)")->capture_default_str();
    app->add_option("--eps-r", eps_r, "Wall relative permittivity")->capture_default_str();
    app->add_option("--polarization", polarization, "horizontal or vertical")
        ->check(CLI::IsMember({"horizontal", "vertical"}))
        ->capture_default_str();
  }

  pwe::TunnelEnvironment environment() const {
    pwe::TunnelEnvironment env;
    env.length_m = length_m;
    env.height_m = height_m;
    env.delta_range_m = dz;
    env.delta_height_m = dx;
    env.eps_r = eps_r;
    env.polarization = polarization == "vertical" ? pwe::Polarization::vertical : pwe::Polarization::horizontal;
    return env;
  }
};

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not a number");
    }
  }
  if (out.empty()) throw ConfigError("empty number list");
  return out;
}

std::shared_ptr<const data::Dataset> load_dataset(const std::string& path) {
  return std::make_shared<const data::Dataset>(data::read_dataset(path));
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  io::write_file_atomic(path, std::string_view(text));
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Tunnel field toolkit: parabolic-equation solver and sparse-line GAN reconstruction", "tunnelwave"};
  app.require_subcommand(1);
  std::function<void()> action;

  // generate-dataset
  auto* gen = app.add_subcommand("generate-dataset", "Solve random tunnel environments into a dataset file");
  struct {
    std::string out;
    std::size_t n_samples = 1;
    std::uint64_t seed = 0;
    double freq_min = data::kMinDatasetFrequencyHz;
    double freq_max = data::kMaxDatasetFrequencyHz;
    double sigma_min = 0.001;
    double sigma_max = 0.1;
    double floor_db = pwe::kDefaultFloorDb;
    std::optional<double> source_min;
    std::optional<double> source_max;
    unsigned threads = 0;
    GridFlags grid;
  } g;
  gen->add_option("--out", g.out, "Output dataset path")->required();
  gen->add_option("--n-samples", g.n_samples, "Number of slices")->capture_default_str();
  gen->add_option("--seed", g.seed, "Sampling seed")->capture_default_str();
  gen->add_option("--freq-min", g.freq_min, "Lowest frequency (Hz)")->capture_default_str();
  gen->add_option("--freq-max", g.freq_max, "Highest frequency (Hz)")->capture_default_str();
  gen->add_option("--sigma-min", g.sigma_min, "Lowest wall conductivity (S/m)")->capture_default_str();
  gen->add_option("--sigma-max", g.sigma_max, "Highest wall conductivity (S/m)")->capture_default_str();
  gen->add_option("--floor-db", g.floor_db, "Normalization floor (dB)")->capture_default_str();
  gen->add_option("--source-height-min", g.source_min, "Lowest source height (m); default mid-height");
  gen->add_option("--source-height-max", g.source_max, "Highest source height (m)");
  gen->add_option("--threads", g.threads, "Solver threads (0: TW_THREADS or all cores)")->capture_default_str();
  g.grid.add(gen);
  gen->callback([&] {
    action = [&] {
      data::GenerationConfig c;
      c.environment = g.grid.environment();
      c.frequency_hz = {g.freq_min, g.freq_max};
      c.sigma_s_per_m = {g.sigma_min, g.sigma_max};
      if (g.source_min || g.source_max) {
        c.source_height_m = data::Range{g.source_min.value_or(g.source_max.value_or(0.0)),
                                        g.source_max.value_or(g.source_min.value_or(0.0))};
      }
      c.floor_db = g.floor_db;
      c.n_samples = g.n_samples;
      c.seed = g.seed;
      c.threads = g.threads;
      const auto t0 = Clock::now();
      const auto ds = data::generate_dataset(c);
      data::write_dataset(g.out, ds);
      out << "wrote " << ds.samples.size() << " samples of " << ds.height << "x" << ds.width << " to " << g.out
          << " in " << seconds_since(t0) << " s\n";
    };
  });

  // train
  auto* train = app.add_subcommand("train", "Train the generator and discriminator");
  struct {
    std::string config;
    std::string data;
    std::string out;
    std::string resume;
  } t;
  train->add_option("--config", t.config, "JSON training config")->required();
  train->add_option("--data", t.data, "Dataset path (overrides the config)");
  train->add_option("--out", t.out, "Output directory")->required();
  train->add_option("--resume", t.resume, "Checkpoint to resume from");
  train->callback([&] {
    action = [&] {
      auto config = train::read_train_config(t.config);
      if (!t.data.empty()) config.dataset_path = t.data;
      if (config.dataset_path.empty()) throw ConfigError("no dataset given (--data or config 'dataset')");
      const auto ds = load_dataset(config.dataset_path);
      train::Trainer trainer(config, ds);
      if (!t.resume.empty()) trainer.load_checkpoint(t.resume);
      fs::create_directories(t.out);
      write_text(fs::path(t.out) / "config.json", train::to_json_string(config));
      train::Observer obs;
      obs.on_epoch = [&](const train::EpochSummary& s) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "epoch %zu rho %.4f loss %.6g disc %.6g", s.epoch, s.rho, s.mean.total,
                      s.mean.disc);
        out << buf;
        if (s.validation_rel_error_percent) out << " val_rel_error " << *s.validation_rel_error_percent << "%";
        out << "\n";
      };
      trainer.run(obs, fs::path(t.out));
      out << "checkpoint " << (fs::path(t.out) / "final.twc").string() << "\n";
    };
  });

  // gamma-sweep
  auto* sweep = app.add_subcommand("gamma-sweep", "Train once per physics weight and tabulate validation error");
  struct {
    std::string config;
    std::string data;
    std::string gammas = "1,5,10,20";
    std::string out;
  } s;
  sweep->add_option("--config", s.config, "JSON training config")->required();
  sweep->add_option("--data", s.data, "Dataset path (overrides the config)");
  sweep->add_option("--gammas", s.gammas, "Comma-separated physics weights")->capture_default_str();
  sweep->add_option("--out", s.out, "Output CSV")->required();
  sweep->callback([&] {
    action = [&] {
      auto config = train::read_train_config(s.config);
      if (!s.data.empty()) config.dataset_path = s.data;
      if (config.dataset_path.empty()) throw ConfigError("no dataset given (--data or config 'dataset')");
      const auto gammas = parse_list(s.gammas);
      const auto rows = train::gamma_sweep(config, load_dataset(config.dataset_path), gammas);
      const std::string csv = train::gamma_csv(rows);
      write_text(s.out, csv);
      out << csv;
    };
  });

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "Reconstruct a full field image from one measured line");
  struct {
    std::string checkpoint;
    std::string line;
    std::size_t row = 0;
    std::string out;
    bool timing = false;
    bool compare_pwe = false;
    double frequency_hz = 900e6;
    double sigma = 0.01;
    GridFlags grid;
  } r;
  rec->add_option("--checkpoint", r.checkpoint, "Trained checkpoint")->required();
  rec->add_option("--line", r.line, "CSV with one row of normalized line values")->required();
  rec->add_option("--row", r.row, "Image row the line was measured on")->required();
  rec->add_option("--out", r.out, "Output image (.pgm for a graymap, otherwise CSV)")->required();
  rec->add_flag("--timing", r.timing, "Print the generator wall time");
  rec->add_flag("--compare-pwe", r.compare_pwe, "Also time one solver run of the environment below");
  rec->add_option("--freq", r.frequency_hz, "Solver frequency for --compare-pwe (Hz)")->capture_default_str();
  rec->add_option("--sigma", r.sigma, "Solver wall conductivity for --compare-pwe (S/m)")->capture_default_str();
  r.grid.add(rec);
  rec->callback([&] {
    action = [&] {
      auto model = train::load_inference_model(r.checkpoint);
      const auto line = io::read_line_csv(r.line);
      const auto input = data::inference_line_input(line, r.row, model.height, model.width);
      const auto t0 = Clock::now();
      const FieldImage img = train::predict(model.generator, input);
      const double gen_s = seconds_since(t0);
      if (fs::path(r.out).extension() == ".pgm") {
        io::write_pgm16(r.out, img);
      } else {
        io::write_image_csv(r.out, img);
      }
      out << "reconstructed " << img.height << "x" << img.width << " image to " << r.out << "\n";
      if (r.timing) out << "generator_seconds " << gen_s << "\n";
      if (r.compare_pwe) {
        auto env = r.grid.environment();
        env.frequency_hz = r.frequency_hz;
        env.sigma_s_per_m = r.sigma;
        env.validate();
        const auto t1 = Clock::now();
        const auto slice = pwe::solve(env, pwe::default_source(env));
        const double pwe_s = seconds_since(t1);
        out << "pwe_seconds " << pwe_s << " (" << slice.n_range << "x" << slice.n_height << " grid)\n";
        out << "speedup " << pwe_s / gen_s << "\n";
      }
    };
  });

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Single-line reconstruction metrics on a dataset split");
  struct {
    std::string checkpoint;
    std::string data;
    std::string split = "val";
    std::size_t lines = 3;
    std::string out;
  } e;
  ev->add_option("--checkpoint", e.checkpoint, "Trained checkpoint")->required();
  ev->add_option("--data", e.data, "Dataset path")->required();
  ev->add_option("--split", e.split, "train, val or all")
      ->check(CLI::IsMember({"train", "val", "all"}))
      ->capture_default_str();
  ev->add_option("--lines", e.lines, "Random rows per sample in the line table")->capture_default_str();
  ev->add_option("--out", e.out, "Output directory")->required();
  ev->callback([&] {
    action = [&] {
      auto model = train::load_inference_model(e.checkpoint);
      const auto ds = load_dataset(e.data);
      if (ds->height != model.height || ds->width != model.width) {
        throw DataError("dataset images do not match the checkpoint's image size");
      }
      const auto split = e.split == "train" ? data::Split::train
                         : e.split == "val" ? data::Split::validation
                                            : data::Split::all;
      const auto idx = data::split_indices(ds->samples.size(), model.config.validation_fraction, split);
      if (idx.empty()) throw DataError("the requested split is empty");
      const auto report = train::evaluate_single_line(model.generator, *ds, idx, e.lines, model.config.seed);
      const fs::path dir(e.out);
      write_text(dir / "eval.csv", metrics::to_csv(report));
      write_text(dir / "eval.json", metrics::to_json(report));
      write_text(dir / "lines.csv", metrics::lines_csv(report));
      out << metrics::format_rmse("Inc-GAN", report.rmse.mean) << "\n";
      out << "mean rel error " << report.rel_error_percent.mean << "% over " << report.samples.size()
          << " samples\n";
    };
  });

  // validate-pwe
  auto* val = app.add_subcommand("validate-pwe", "Run a solver self-check");
  struct {
    std::string which;
    std::string out;
  } v;
  val->add_option("--case", v.which, "free-space-beam, convergence or energy")
      ->required()
      ->check(CLI::IsMember({"free-space-beam", "convergence", "energy"}));
  val->add_option("--out", v.out, "Report JSON path");
  val->callback([&] {
    action = [&] {
      namespace pv = pwe::validation;
      std::string report;
      bool passed = false;
      if (v.which == "free-space-beam") {
        const auto rep = pv::free_space_beam();
        report = pv::to_json(rep);
        passed = rep.passed;
      } else if (v.which == "convergence") {
        const auto rep = pv::self_convergence();
        report = pv::to_json(rep);
        passed = rep.passed;
      } else {
        const auto rep = pv::energy_conservation();
        report = pv::to_json(rep);
        passed = rep.passed;
      }
      if (!v.out.empty()) write_text(v.out, report);
      out << report;
      if (!passed) throw NumericError("validation case " + v.which + " failed");
    };
  });

  // export-image
  auto* ex = app.add_subcommand("export-image", "Write a field image as a 16-bit graymap and CSV");
  struct {
    std::string data;
    std::size_t index = 0;
    std::string image;
    std::string out;
  } x;
  auto* data_opt = ex->add_option("--data", x.data, "Dataset path (exports a target image)");
  ex->add_option("--index", x.index, "Sample index in the dataset")->capture_default_str();
  auto* image_opt = ex->add_option("--image", x.image, "Image CSV to convert");
  data_opt->excludes(image_opt);
  ex->add_option("--out", x.out, "Output prefix; writes <prefix>.pgm and <prefix>.csv")->required();
  ex->callback([&] {
    action = [&] {
      FieldImage img;
      if (!x.data.empty()) {
        const auto ds = data::read_dataset(x.data);
        if (x.index >= ds.samples.size()) {
          throw ConfigError("index " + std::to_string(x.index) + " outside a dataset of " +
                            std::to_string(ds.samples.size()) + " samples");
        }
        img = ds.samples[x.index].target;
      } else if (!x.image.empty()) {
        img = io::read_image_csv(x.image);
      } else {
        throw ConfigError("export-image needs --data or --image");
      }
      const fs::path prefix(x.out);
      if (prefix.has_parent_path()) fs::create_directories(prefix.parent_path());
      io::write_pgm16(prefix.string() + ".pgm", img);
      io::write_image_csv(prefix.string() + ".csv", img);
      out << "wrote " << prefix.string() << ".pgm and .csv (" << img.height << "x" << img.width << ")\n";
    };
  });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (action) action();
    return kExitOk;
  } catch (const ConfigError& ex) {
    err << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& ex) {
    err << "numeric error: " << ex.what() << "\n";
    return kExitNumeric;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const fs::filesystem_error& ex) {
    err << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& ex) {
    err << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return 1;
  }
}

}  // namespace tw::cli
