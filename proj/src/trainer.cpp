#include "tunnelwave/trainer.hpp"

#include <algorithm>
#include <type_traits>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "tunnelwave/binary_io.hpp"
#include "tunnelwave/errors.hpp"

namespace tw::train {

using nlohmann::json;

namespace {

constexpr std::uint64_t kShuffleKey = std::numeric_limits<std::uint64_t>::max();

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t derived_seed(std::uint64_t seed, std::uint64_t which) { return data::keyed_rng(seed, which, 0x6d6f64)(); }

gan::GeneratorConfig generator_config(const TrainConfig& c, const data::Dataset& d) {
  return gan::generator_config_for(d.height, d.width, c.base_channels, c.max_channels);
}

gan::DiscriminatorConfig discriminator_config(const TrainConfig& c) {
  gan::DiscriminatorConfig d;
  d.channels = c.disc_channels;
  return d;
}

const data::Dataset& checked_dataset(const std::shared_ptr<const data::Dataset>& d) {
  if (!d) throw DataError("no dataset supplied");
  if (d->samples.empty()) throw DataError("dataset holds no samples");
  for (const auto& s : d->samples) {
    if (s.target.height != d->height || s.target.width != d->width) {
      throw DataError("dataset sample shape differs from the dataset header");
    }
  }
  return *d;
}

std::vector<ckpt::NamedArray> tensors_to_arrays(const std::vector<gan::NamedTensor>& ts) {
  std::vector<ckpt::NamedArray> out;
  for (const auto& [name, t] : ts) out.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  return out;
}

void push_u64(std::vector<ckpt::NamedArray>& out, const std::string& name, std::uint64_t v) {
  out.push_back({name, {2}, {static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)}});
}

std::uint64_t read_u64(const ckpt::ArrayMap& m, const std::string& name) {
  const auto& a = m.at(name);
  if (a.values.size() != 2) throw DataError("checkpoint entry " + name + " is malformed");
  return (static_cast<std::uint64_t>(a.values[0]) << 32) | static_cast<std::uint64_t>(a.values[1]);
}

void push_text(std::vector<ckpt::NamedArray>& out, const std::string& name, const std::string& text) {
  std::vector<double> v;
  for (unsigned char ch : text) v.push_back(ch);
  out.push_back({name, {text.size()}, std::move(v)});
}

std::string read_text(const ckpt::ArrayMap& m, const std::string& name) {
  std::string s;
  for (double x : m.at(name).values) s.push_back(static_cast<char>(static_cast<unsigned char>(x)));
  return s;
}

void push_adam(std::vector<ckpt::NamedArray>& out, const std::string& prefix, const std::vector<gan::NamedTensor>& names,
               const ad::Adam& opt) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& m = opt.first_moments()[i];
    const auto& v = opt.second_moments()[i];
    out.push_back({prefix + ".m." + names[i].first, m.shape(), {m.values().begin(), m.values().end()}});
    out.push_back({prefix + ".v." + names[i].first, v.shape(), {v.values().begin(), v.values().end()}});
  }
  push_u64(out, prefix + ".t", opt.steps_taken());
}

void restore_adam(const ckpt::ArrayMap& m, const std::string& prefix, const std::vector<gan::NamedTensor>& names,
                  ad::Adam& opt) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    m.copy_into(prefix + ".m." + names[i].first, opt.first_moments()[i]);
    m.copy_into(prefix + ".v." + names[i].first, opt.second_moments()[i]);
  }
  opt.set_steps_taken(read_u64(m, prefix + ".t"));
}

void restore_named(const ckpt::ArrayMap& m, const std::vector<gan::NamedTensor>& ts) {
  for (const auto& [name, t] : ts) {
    ad::Tensor dst = t;
    m.copy_into(name, dst);
  }
}

void check_finite(const loss::LossReport& r, std::size_t epoch, std::size_t step) {
  const double vals[] = {r.adv, r.l1, r.mse, r.ssim, r.nonneg, r.boundary, r.smooth, r.total, r.disc};
  for (double v : vals) {
    if (!std::isfinite(v)) {
      char buf[512];
      std::snprintf(buf, sizeof buf,
                    "non-finite loss at epoch %zu step %zu: disc=%g adv=%g l1=%g mse=%g ssim=%g nonneg=%g "
                    "boundary=%g smooth=%g total=%g",
                    epoch, step, r.disc, r.adv, r.l1, r.mse, r.ssim, r.nonneg, r.boundary, r.smooth, r.total);
      throw NumericError(buf);
    }
  }
}

template <typename T>
T get_as(const json& j, const char* key) {
  auto bad_count = [&](const json& v) {
    if (!v.is_number_unsigned()) throw ConfigError(std::string("config key '") + key + "' must be a non-negative integer");
  };
  if constexpr (std::is_unsigned_v<T>) {
    bad_count(j);
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
    if (j.is_array()) for (const auto& v : j) bad_count(v);
  }
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "' has the wrong type");
  }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end()) {
      throw ConfigError("unknown config key '" + where + key + "'");
    }
  }
}

template <typename T>
void read_key(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = get_as<T>(obj.at(key), key);
}

}  // namespace

// ---- config ------------------------------------------------------------------------

data::ProgressiveSchedule TrainConfig::schedule() const {
  return {rho_init, rho_final, t_prog.value_or(std::max(1.0, static_cast<double>(epochs) / 2.0))};
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lr_g > 0.0) || !(lr_d > 0.0)) throw ConfigError("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("validation_fraction must lie in [0, 1)");
  }
  if (base_channels == 0 || max_channels < base_channels) throw ConfigError("bad generator channel overrides");
  if (disc_channels.empty()) throw ConfigError("disc_channels must not be empty");
  schedule().validate();
  weights.validate();
}

TrainConfig parse_train_config(std::string_view json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"epochs", "batch_size", "lr_g", "lr_d", "beta1", "beta2", "schedule", "weights", "seed",
                  "checkpoint_every", "dataset", "validation_fraction", "model"},
                 "");
  TrainConfig c;
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "lr_g", c.lr_g);
  read_key(j, "lr_d", c.lr_d);
  read_key(j, "beta1", c.beta1);
  read_key(j, "beta2", c.beta2);
  read_key(j, "seed", c.seed);
  read_key(j, "checkpoint_every", c.checkpoint_every);
  read_key(j, "dataset", c.dataset_path);
  read_key(j, "validation_fraction", c.validation_fraction);
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    reject_unknown(s, {"rho_init", "rho_final", "t_prog"}, "schedule.");
    read_key(s, "rho_init", c.rho_init);
    read_key(s, "rho_final", c.rho_final);
    if (s.contains("t_prog") && !s.at("t_prog").is_null()) c.t_prog = get_as<double>(s.at("t_prog"), "t_prog");
  }
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    reject_unknown(w, {"adv", "l1", "mse", "ssim", "physics"}, "weights.");
    read_key(w, "adv", c.weights.adv);
    read_key(w, "l1", c.weights.l1);
    read_key(w, "mse", c.weights.mse);
    read_key(w, "ssim", c.weights.ssim);
    read_key(w, "physics", c.weights.physics);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"base_channels", "max_channels", "disc_channels"}, "model.");
    read_key(m, "base_channels", c.base_channels);
    read_key(m, "max_channels", c.max_channels);
    read_key(m, "disc_channels", c.disc_channels);
  }
  c.validate();
  return c;
}

TrainConfig read_train_config(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = io::read_file(path);
  } catch (const DataError& e) {
    throw ConfigError(std::string("cannot read config: ") + e.what());
  }
  return parse_train_config(std::string(bytes.begin(), bytes.end()));
}

namespace {

json config_json(const TrainConfig& c, bool include_plumbing) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_g"] = c.lr_g;
  j["lr_d"] = c.lr_d;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["schedule"] = {{"rho_init", c.rho_init}, {"rho_final", c.rho_final}};
  j["schedule"]["t_prog"] = c.t_prog ? json(*c.t_prog) : json(nullptr);
  j["weights"] = {{"adv", c.weights.adv},   {"l1", c.weights.l1},          {"mse", c.weights.mse},
                  {"ssim", c.weights.ssim}, {"physics", c.weights.physics}};
  j["seed"] = c.seed;
  j["validation_fraction"] = c.validation_fraction;
  j["model"] = {{"base_channels", c.base_channels}, {"max_channels", c.max_channels}, {"disc_channels", c.disc_channels}};
  if (include_plumbing) {
    j["checkpoint_every"] = c.checkpoint_every;
    j["dataset"] = c.dataset_path;
  }
  return j;
}

}  // namespace

std::string to_json_string(const TrainConfig& config) { return config_json(config, true).dump(2) + "\n"; }

std::uint64_t config_hash(const TrainConfig& config) {
  // The epoch budget may grow on resume; the schedule it implied may not.
  json j = config_json(config, false);
  j.erase("epochs");
  j["schedule"]["t_prog"] = config.schedule().t_prog;
  return fnv1a(j.dump());
}

// ---- batches and evaluation -----------------------------------------------------------

Batch make_batch(std::span<const data::SparseSample> samples) {
  if (samples.empty()) throw std::invalid_argument("empty batch");
  const std::size_t h = samples[0].mask.height;
  const std::size_t w = samples[0].mask.width;
  const std::size_t plane = h * w;
  const std::size_t n = samples.size();
  std::vector<double> input(n * 2 * plane);
  std::vector<double> cond(n * plane);
  std::vector<double> target(n * plane);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = samples[i];
    if (s.mask.height != h || s.mask.width != w || !s.target || s.target->height != h || s.target->width != w) {
      throw DataError("batch images must share one shape and carry targets");
    }
    std::copy(s.mask.values.begin(), s.mask.values.end(), input.begin() + (2 * i) * plane);
    std::copy(s.data.values.begin(), s.data.values.end(), input.begin() + (2 * i + 1) * plane);
    std::copy(s.data.values.begin(), s.data.values.end(), cond.begin() + i * plane);
    std::copy(s.target->values.begin(), s.target->values.end(), target.begin() + i * plane);
  }
  return {ad::Tensor::from({n, 2, h, w}, std::move(input)), ad::Tensor::from({n, 1, h, w}, std::move(cond)),
          ad::Tensor::from({n, 1, h, w}, std::move(target))};
}

FieldImage predict(gan::Generator& generator, const data::SparseSample& s) {
  const std::size_t h = s.mask.height;
  const std::size_t w = s.mask.width;
  std::vector<double> input(2 * h * w);
  std::copy(s.mask.values.begin(), s.mask.values.end(), input.begin());
  std::copy(s.data.values.begin(), s.data.values.end(), input.begin() + static_cast<std::ptrdiff_t>(h * w));
  ad::NoGradGuard guard;
  const ad::Tensor out = generator.forward(ad::Tensor::from({1, 2, h, w}, std::move(input)), ad::Mode::eval);
  FieldImage img(h, w);
  std::copy(out.values().begin(), out.values().end(), img.values.begin());
  return img;
}

metrics::EvalReport evaluate_single_line(gan::Generator& generator, const data::Dataset& dataset,
                                         std::span<const std::size_t> indices, std::size_t lines_per_sample,
                                         std::uint64_t seed) {
  std::vector<metrics::SampleMetrics> rows;
  std::vector<metrics::EvalReport::LineTable> tables;
  for (std::size_t idx : indices) {
    const auto& s = dataset.samples.at(idx);
    const auto input = data::inference_line_input(s.target.row(s.source_row), s.source_row, s.target.height,
                                                  s.target.width);
    const FieldImage pred = predict(generator, input);
    rows.push_back(metrics::evaluate_sample(idx, pred, s.target));
    if (lines_per_sample > 0) {
      auto rng = data::keyed_rng(seed, idx, 0x6c696e);
      const std::size_t k = std::min(lines_per_sample, s.target.height);
      std::vector<std::size_t> all(s.target.height);
      for (std::size_t r = 0; r < all.size(); ++r) all[r] = r;
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
        std::swap(all[i], all[pick(rng)]);
      }
      std::vector<std::size_t> chosen(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k));
      std::sort(chosen.begin(), chosen.end());
      tables.push_back({idx, metrics::line_profile_compare(pred, s.target, chosen)});
    }
  }
  auto report = metrics::summarize(std::move(rows));
  report.line_tables = std::move(tables);
  return report;
}

// ---- trainer ---------------------------------------------------------------------------

Trainer::Trainer(TrainConfig config, std::shared_ptr<const data::Dataset> dataset)
    : config_((config.validate(), std::move(config))),
      dataset_(std::move(dataset)),
      train_indices_(data::split_indices(checked_dataset(dataset_).samples.size(), config_.validation_fraction,
                                         data::Split::train)),
      validation_indices_(
          data::split_indices(dataset_->samples.size(), config_.validation_fraction, data::Split::validation)),
      generator_(generator_config(config_, *dataset_), derived_seed(config_.seed, 1)),
      discriminator_(discriminator_config(config_), derived_seed(config_.seed, 2)),
      opt_g_(generator_.parameter_tensors(), {config_.lr_g, config_.beta1, config_.beta2}),
      opt_d_(discriminator_.parameter_tensors(), {config_.lr_d, config_.beta1, config_.beta2}) {
  if (train_indices_.empty()) throw ConfigError("the validation split leaves no training samples");
}

data::SparseSample Trainer::training_sample(std::size_t index, double rho) const {
  const auto& s = dataset_->samples.at(index);
  auto rng = data::keyed_rng(config_.seed, epoch_, index);
  const auto rows = data::sample_rows(rho, s.target.height, s.source_row, rng);
  return data::make_sparse_sample(s.target, rows, s.source_row, s.meta);
}

std::vector<std::size_t> Trainer::epoch_order() const {
  std::vector<std::size_t> order = train_indices_;
  auto rng = data::keyed_rng(config_.seed, epoch_, kShuffleKey);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(order[i - 1], order[pick(rng)]);
  }
  return order;
}

loss::LossReport Trainer::train_step(std::span<const data::SparseSample> samples) {
  const Batch batch = make_batch(samples);
  const ad::Tensor fake = generator_.forward(batch.input, ad::Mode::train);
  last_min_output_ = *std::min_element(fake.values().begin(), fake.values().end());

  opt_d_.zero_grad();
  const ad::Tensor d_real = discriminator_.forward(batch.condition, batch.target, ad::Mode::train);
  const ad::Tensor d_fake = discriminator_.forward(batch.condition, ad::detach(fake), ad::Mode::train);
  const ad::Tensor loss_d = loss::adversarial_d(d_real, d_fake);
  const double disc_value = loss_d.item();
  if (!std::isfinite(disc_value)) {
    throw NumericError("non-finite discriminator loss at epoch " + std::to_string(epoch_) + " step " +
                       std::to_string(step_));
  }
  ad::backward(loss_d);
  opt_d_.step();

  auto d_params = discriminator_.parameter_tensors();
  for (auto& p : d_params) p.set_requires_grad(false);
  opt_g_.zero_grad();
  const ad::Tensor d_fake_g = discriminator_.forward(batch.condition, fake, ad::Mode::train);
  auto weighted = loss::total_generator_loss(loss::generator_terms(fake, batch.target, d_fake_g), config_.weights);
  for (auto& p : d_params) p.set_requires_grad(true);

  weighted.report.disc = disc_value;
  weighted.report.epoch = epoch_;
  weighted.report.step = step_;
  check_finite(weighted.report, epoch_, step_);
  ad::backward(weighted.total);
  opt_g_.step();
  ++step_;
  return weighted.report;
}

EpochSummary Trainer::run_epoch(const Observer& observer) {
  const double rho = data::progressive_rho(static_cast<double>(epoch_), config_.schedule());
  const auto order = epoch_order();
  EpochSummary summary;
  summary.epoch = epoch_;
  summary.rho = rho;

  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    std::vector<data::SparseSample> samples;
    StepInfo info;
    info.epoch = epoch_;
    info.step = step_;
    info.rho = rho;
    for (std::size_t i = begin; i < end; ++i) {
      samples.push_back(training_sample(order[i], rho));
      info.sample_indices.push_back(order[i]);
      info.mask_row_counts.push_back(samples.back().rows.size());
    }
    info.report = train_step(samples);
    info.min_generator_output = last_min_output_;
    log_.push_back(info.report);

    auto& m = summary.mean;
    m.adv += info.report.adv;
    m.l1 += info.report.l1;
    m.mse += info.report.mse;
    m.ssim += info.report.ssim;
    m.nonneg += info.report.nonneg;
    m.boundary += info.report.boundary;
    m.smooth += info.report.smooth;
    m.total += info.report.total;
    m.disc += info.report.disc;
    ++summary.steps;
    if (observer.on_step) observer.on_step(info);
  }
  auto& m = summary.mean;
  const double inv = 1.0 / static_cast<double>(summary.steps);
  for (double* v : {&m.adv, &m.l1, &m.mse, &m.ssim, &m.nonneg, &m.boundary, &m.smooth, &m.total, &m.disc}) *v *= inv;
  m.epoch = epoch_;
  m.step = step_;

  summary.validation_rel_error_percent = validation_error();
  ++epoch_;
  if (observer.on_epoch) observer.on_epoch(summary);
  return summary;
}

std::optional<double> Trainer::validation_error() {
  if (validation_indices_.empty()) return std::nullopt;
  return evaluate_single_line(generator_, *dataset_, validation_indices_).rel_error_percent.mean;
}

std::vector<EpochSummary> Trainer::run(const Observer& observer, const std::optional<std::filesystem::path>& out_dir) {
  std::vector<EpochSummary> summaries;
  auto write_logs = [&] {
    if (!out_dir) return;
    std::string log = loss::loss_csv_header() + "\n";
    for (const auto& r : log_) log += loss::loss_csv_row(r) + "\n";
    io::write_file_atomic(*out_dir / "train_log.csv", std::string_view(log));
    std::string ep = "epoch,rho,steps,total,disc,validation_rel_error_percent\n";
    char buf[256];
    for (const auto& s : summaries) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%zu,%.17g,%.17g,", s.epoch, s.rho, s.steps, s.mean.total, s.mean.disc);
      ep += buf;
      if (s.validation_rel_error_percent) {
        std::snprintf(buf, sizeof buf, "%.17g", *s.validation_rel_error_percent);
        ep += buf;
      }
      ep += "\n";
    }
    io::write_file_atomic(*out_dir / "epochs.csv", std::string_view(ep));
  };
  if (out_dir) std::filesystem::create_directories(*out_dir);

  while (epoch_ < config_.epochs) {
    summaries.push_back(run_epoch(observer));
    if (out_dir && config_.checkpoint_every > 0 && epoch_ % config_.checkpoint_every == 0 && epoch_ < config_.epochs) {
      char name[64];
      std::snprintf(name, sizeof name, "epoch_%04zu.twc", epoch_);
      save_checkpoint(*out_dir / name);
      write_logs();
    }
  }
  if (out_dir) {
    save_checkpoint(*out_dir / "final.twc");
    write_logs();
  }
  return summaries;
}

// ---- checkpoints ---------------------------------------------------------------------

std::string Trainer::manifest_json() const {
  const auto& g = generator_.config();
  const auto& d = discriminator_.config();
  json j;
  j["train_config"] = config_json(config_, true);
  j["generator"] = {{"input_channels", g.input_channels},     {"encoder_channels", g.encoder_channels},
                    {"bottleneck_channels", g.bottleneck_channels}, {"decoder_channels", g.decoder_channels},
                    {"output_channels", g.output_channels},   {"depth", g.depth},
                    {"attention_reduction", g.attention_reduction}};
  j["discriminator"] = {{"input_channels", d.input_channels}, {"channels", d.channels},
                        {"output_channels", d.output_channels}, {"leaky_slope", d.leaky_slope},
                        {"power_iterations", d.power_iterations}};
  j["image"] = {{"height", dataset_->height}, {"width", dataset_->width}, {"floor_db", dataset_->floor_db}};
  return j.dump();
}

std::vector<ckpt::NamedArray> Trainer::checkpoint_arrays() const {
  std::vector<ckpt::NamedArray> out = tensors_to_arrays(generator_.parameters());
  for (auto& a : tensors_to_arrays(generator_.buffers())) out.push_back(std::move(a));
  for (auto& a : tensors_to_arrays(discriminator_.parameters())) out.push_back(std::move(a));
  for (std::size_t i = 0; i < discriminator_.n_convs(); ++i) {
    const auto& u = discriminator_.sn_vector(i);
    out.push_back({"disc.sn_u." + std::to_string(i), {u.size()}, u});
  }
  push_adam(out, "opt_g", generator_.parameters(), opt_g_);
  push_adam(out, "opt_d", discriminator_.parameters(), opt_d_);
  push_u64(out, "state.epoch", epoch_);
  push_u64(out, "state.step", step_);
  push_u64(out, "state.seed", config_.seed);
  push_u64(out, "state.config_hash", config_hash(config_));
  push_text(out, "meta.manifest", manifest_json());
  return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  const auto arrays = checkpoint_arrays();
  ckpt::write_checkpoint(path, arrays);
}

void Trainer::restore(const ckpt::ArrayMap& m) {
  if (read_u64(m, "state.config_hash") != config_hash(config_)) {
    throw ConfigError("checkpoint was written by a run with a different configuration");
  }
  restore_named(m, generator_.parameters());
  restore_named(m, generator_.buffers());
  restore_named(m, discriminator_.parameters());
  for (std::size_t i = 0; i < discriminator_.n_convs(); ++i) {
    const auto& a = m.at("disc.sn_u." + std::to_string(i));
    auto& u = discriminator_.sn_vector(i);
    if (a.values.size() != u.size()) throw DataError("spectral-norm vector size mismatch in checkpoint");
    u = a.values;
  }
  restore_adam(m, "opt_g", generator_.parameters(), opt_g_);
  restore_adam(m, "opt_d", discriminator_.parameters(), opt_d_);
  epoch_ = read_u64(m, "state.epoch");
  step_ = read_u64(m, "state.step");
}

void Trainer::load_checkpoint(const std::filesystem::path& path) {
  restore(ckpt::ArrayMap(ckpt::read_checkpoint(path)));
}

InferenceModel load_inference_model(const std::filesystem::path& checkpoint) {
  const ckpt::ArrayMap m(ckpt::read_checkpoint(checkpoint));
  json manifest;
  try {
    manifest = json::parse(read_text(m, "meta.manifest"));
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint manifest is unreadable: ") + e.what());
  }
  const TrainConfig config = parse_train_config(manifest.at("train_config").dump());
  gan::GeneratorConfig g;
  const json& gj = manifest.at("generator");
  g.input_channels = gj.at("input_channels");
  g.encoder_channels = gj.at("encoder_channels").get<std::vector<std::size_t>>();
  g.bottleneck_channels = gj.at("bottleneck_channels").get<std::vector<std::size_t>>();
  g.decoder_channels = gj.at("decoder_channels").get<std::vector<std::size_t>>();
  g.output_channels = gj.at("output_channels");
  g.depth = gj.at("depth");
  g.attention_reduction = gj.at("attention_reduction");
  InferenceModel model{gan::Generator(g, 0), config, manifest.at("image").at("height"),
                       manifest.at("image").at("width"), manifest.at("image").at("floor_db")};
  restore_named(m, model.generator.parameters());
  restore_named(m, model.generator.buffers());
  return model;
}

// ---- gamma sweep ---------------------------------------------------------------------

std::vector<GammaResult> gamma_sweep(const TrainConfig& config, std::shared_ptr<const data::Dataset> dataset,
                                     std::span<const double> gammas, const Observer& observer) {
  if (gammas.empty()) throw ConfigError("gamma sweep needs at least one gamma");
  std::vector<GammaResult> out;
  for (double gamma : gammas) {
    TrainConfig c = config;
    c.weights.physics = gamma;
    Trainer trainer(c, dataset);
    if (trainer.validation_indices().empty()) throw ConfigError("gamma sweep needs a non-empty validation split");
    const auto summaries = trainer.run(observer);
    out.push_back({gamma, *summaries.back().validation_rel_error_percent});
  }
  return out;
}

std::string gamma_csv(std::span<const GammaResult> rows) {
  std::string out = "gamma,validation_rel_error_percent\n";
  char buf[96];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", r.gamma, r.validation_rel_error_percent);
    out += buf;
  }
  return out;
}

}  // namespace tw::train
