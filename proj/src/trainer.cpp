#include "aldsr/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "aldsr/errors.hpp"
#include "aldsr/model_io.hpp"
#include "aldsr/ops.hpp"

namespace aldsr {

template <typename T>
AdamState<T> AdamState<T>::zeros_like(const ParameterList<T>& params) {
  AdamState state;
  for (const auto& p : params) {
    state.m.emplace_back(p.tensor.numel(), T{0});
    state.v.emplace_back(p.tensor.numel(), T{0});
  }
  return state;
}

template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& tensor = params[i].tensor;
    if (state.m[i].size() != tensor.numel() || state.v[i].size() != tensor.numel()) {
      throw ContractError("adam_step: moment shape mismatch for '" + params[i].name + "'");
    }
    for (T g : tensor.grad()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter '" + params[i].name + "'");
      }
    }
  }
  state.t += 1;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> tensor = params[i].tensor;
    const auto grad = tensor.grad();
    auto values = tensor.mutable_values();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[k]);
      m[k] = static_cast<T>(b1 * m[k] + (1.0 - b1) * g);
      v[k] = static_cast<T>(b2 * v[k] + (1.0 - b2) * g * g);
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      values[k] = static_cast<T>(values[k] - lr * m_hat / (std::sqrt(v_hat) + state.eps));
    }
  }
}

std::size_t TrainConfig::total_iterations() const {
  return max_iterations > 0 ? max_iterations : epochs * iterations_per_epoch;
}

void TrainConfig::validate() const {
  if (batch == 0 || patch == 0 || epochs == 0 || iterations_per_epoch == 0) {
    throw ConfigError("batch, patch, epochs and iterations_per_epoch must be positive");
  }
  if (!(lr0 > 0.0) || !std::isfinite(lr0)) throw ConfigError("lr must be positive");
}

double lr_schedule(std::size_t epoch, double lr0, std::size_t halve_epoch) {
  return epoch < halve_epoch ? lr0 : lr0 / 2.0;
}

const std::set<std::string>& train_config_keys() {
  static const std::set<std::string> keys = {
      "batch", "patch", "lr", "halve_epoch", "epochs", "iterations_per_epoch", "max_iterations",
      "seed",  "augment", "checkpoint_every", "eval_every"};
  return keys;
}

TrainConfig train_config_from(const KeyValueConfig& config) {
  TrainConfig out;
  out.batch = config.get_size("batch", out.batch);
  out.patch = config.get_size("patch", out.patch);
  out.lr0 = config.get_double("lr", out.lr0);
  out.halve_epoch = config.get_size("halve_epoch", out.halve_epoch);
  out.epochs = config.get_size("epochs", out.epochs);
  out.iterations_per_epoch = config.get_size("iterations_per_epoch", out.iterations_per_epoch);
  out.max_iterations = config.get_size("max_iterations", out.max_iterations);
  out.seed = config.get_u64("seed", out.seed);
  out.augment = config.get_bool("augment", out.augment);
  out.checkpoint_every = config.get_size("checkpoint_every", out.checkpoint_every);
  out.eval_every = config.get_size("eval_every", out.eval_every);
  out.validate();
  return out;
}

namespace {

std::string format_double(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

}  // namespace

KeyValueConfig train_config_to(const TrainConfig& config) {
  KeyValueConfig out;
  out.set("batch", std::to_string(config.batch));
  out.set("patch", std::to_string(config.patch));
  out.set("lr", format_double(config.lr0));
  out.set("halve_epoch", std::to_string(config.halve_epoch));
  out.set("epochs", std::to_string(config.epochs));
  out.set("iterations_per_epoch", std::to_string(config.iterations_per_epoch));
  out.set("max_iterations", std::to_string(config.max_iterations));
  out.set("seed", std::to_string(config.seed));
  out.set("augment", config.augment ? "true" : "false");
  out.set("checkpoint_every", std::to_string(config.checkpoint_every));
  out.set("eval_every", std::to_string(config.eval_every));
  return out;
}

std::string loss_csv_line(const LossRow& row) {
  char buffer[128];
  std::snprintf(buffer, sizeof(buffer), "%zu,%zu,%.9g,%.9e", row.iter, row.epoch, row.lr, row.l1);
  return buffer;
}

std::string loss_csv(const std::vector<LossRow>& rows) {
  std::string out = std::string(kLossCsvHeader) + "\n";
  for (const auto& row : rows) out += loss_csv_line(row) + "\n";
  return out;
}

template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw ContractError("stack_images: empty batch");
  const Image& first = *images.front();
  Tensor<T> out(Shape{images.size(), first.channels, first.height, first.width});
  auto values = out.mutable_values();
  const std::size_t stride = first.data.size();
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& image = *images[n];
    if (image.width != first.width || image.height != first.height ||
        image.channels != first.channels) {
      throw DimensionError("stack_images: batch members differ in size");
    }
    for (std::size_t i = 0; i < stride; ++i) values[n * stride + i] = static_cast<T>(image.data[i]);
  }
  return out;
}

namespace {

// Resume compatibility covers the model and every setting that shapes the
// trajectory, but not the run length or side-effect cadences.
std::uint64_t trajectory_hash(const KeyValueConfig& model_config, const TrainConfig& config) {
  KeyValueConfig merged = model_config;
  KeyValueConfig train = train_config_to(config);
  for (const char* key : {"max_iterations", "checkpoint_every", "eval_every"}) {
    train.set(key, "-");
  }
  for (const auto& [key, value] : train.entries()) merged.set("train." + key, value);
  return config_hash(merged);
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(ALDSR<T>& model, const PairSet& data, const TrainConfig& config,
                    const KeyValueConfig& model_config)
    : model_(model),
      data_(data),
      config_(config),
      params_(model.parameters()),
      adam_(AdamState<T>::zeros_like(params_)),
      sampler_(config.seed ^ 0x9E3779B97F4A7C15ULL, config.augment),
      hash_(trajectory_hash(model_config, config)) {
  config_.validate();
  if (model.spec().scale != data.scale()) {
    throw ConfigError("model scale x" + std::to_string(model.spec().scale) +
                      " does not match dataset scale x" + std::to_string(data.scale()));
  }
  if (data.empty()) throw DataError("training set is empty");
}

template <typename T>
LossRow Trainer<T>::step() {
  std::vector<PatchPair> batch;
  batch.reserve(config_.batch);
  for (std::size_t i = 0; i < config_.batch; ++i) batch.push_back(sampler_.next(data_, config_.patch));
  std::vector<const Image*> lr_images;
  std::vector<const Image*> hr_images;
  for (const auto& pair : batch) {
    lr_images.push_back(&pair.lr);
    hr_images.push_back(&pair.hr);
  }
  const Tensor<T> lr = stack_images<T>(lr_images);
  const Tensor<T> hr = stack_images<T>(hr_images);

  LossRow row;
  row.epoch = iteration_ / config_.iterations_per_epoch;
  row.lr = lr_schedule(row.epoch, config_.lr0, config_.halve_epoch);
  for (auto& p : params_) {
    p.tensor.zero_grad();
    p.tensor.set_requires_grad(true);
  }
  {
    Tape<T> tape;
    const Tensor<T> loss = l1_loss(model_.forward(lr), hr);
    row.l1 = static_cast<double>(loss.item());
    if (!std::isfinite(row.l1)) {
      throw NumericError("non-finite loss at iteration " + std::to_string(iteration_ + 1));
    }
    tape.backward(loss);
  }
  adam_step(params_, adam_, row.lr);
  for (auto& p : params_) p.tensor.zero_grad();
  ++iteration_;
  row.iter = iteration_;
  return row;
}

template <typename T>
std::vector<LossRow> Trainer<T>::run(std::size_t until,
                                     const std::function<void(const LossRow&)>& on_step) {
  std::vector<LossRow> rows;
  while (iteration_ < until) {
    rows.push_back(step());
    if (on_step) on_step(rows.back());
  }
  return rows;
}

template <typename T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& prefix) const {
  const auto base = prefix.string();
  save_weights(base + ".aldw", params_);

  std::vector<WeightRecord> moments;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& p = params_[i];
    moments.push_back({p.name + ".m", p.tensor.shape(),
                       std::vector<float>(adam_.m[i].begin(), adam_.m[i].end())});
    moments.push_back({p.name + ".v", p.tensor.shape(),
                       std::vector<float>(adam_.v[i].begin(), adam_.v[i].end())});
  }
  write_weight_file(base + ".opt.aldw", moments);

  KeyValueConfig meta;
  meta.set("format", "1");
  meta.set("iteration", std::to_string(iteration_));
  meta.set("adam_t", std::to_string(adam_.t));
  meta.set("config_hash", std::to_string(hash_));
  meta.set("sampler_state", sampler_.state());
  meta.save(base + ".meta");
}

template <typename T>
void Trainer<T>::load_checkpoint(const std::filesystem::path& prefix) {
  const auto base = prefix.string();
  const KeyValueConfig meta = KeyValueConfig::load(base + ".meta");
  if (meta.get_u64("config_hash", 0) != hash_) {
    throw ConfigError("checkpoint " + base + " was written under a different configuration");
  }
  load_weights(base + ".aldw", params_);

  const auto records = read_weight_file(base + ".opt.aldw");
  ParameterList<T> m_list;
  ParameterList<T> v_list;
  for (const auto& p : params_) {
    m_list.push_back({p.name, Tensor<T>(p.tensor.shape())});
    v_list.push_back({p.name, Tensor<T>(p.tensor.shape())});
  }
  std::vector<WeightRecord> m_records;
  std::vector<WeightRecord> v_records;
  for (const auto& r : records) {
    const bool is_m = r.name.size() > 2 && r.name.compare(r.name.size() - 2, 2, ".m") == 0;
    (is_m ? m_records : v_records).push_back(r);
  }
  assign_records(m_list, m_records, ".m");
  assign_records(v_list, v_records, ".v");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto m = m_list[i].tensor.values();
    const auto v = v_list[i].tensor.values();
    adam_.m[i].assign(m.begin(), m.end());
    adam_.v[i].assign(v.begin(), v.end());
  }
  adam_.t = meta.get_u64("adam_t", 0);
  iteration_ = meta.get_size("iteration", 0);
  sampler_.restore(meta.get("sampler_state", ""));
}

template <typename T>
TrainResult train(ALDSR<T>& model, const PairSet& data, const TrainConfig& config) {
  Trainer<T> trainer(model, data, config);
  return {trainer.run(config.total_iterations())};
}

std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& lr_dir,
                                      const std::filesystem::path& hr_dir, std::size_t scale) {
  if (scale == 0) throw ConfigError("scale must be positive");
  std::vector<EvalPair> pairs;
  for (const auto& hr_path : list_pngs(hr_dir)) {
    const auto lr_path = lr_dir / hr_path.filename();
    if (!std::filesystem::exists(lr_path)) {
      throw DataError("no LR image " + lr_path.string() + " for " + hr_path.string());
    }
    pairs.push_back({hr_path.stem().string(), load_png(lr_path),
                     crop_to_multiple(load_png(hr_path), scale)});
  }
  if (pairs.empty()) throw DataError("no PNG images in " + hr_dir.string());
  return pairs;
}

MetricReport evaluate(const Upscaler& upscale, const std::vector<EvalPair>& pairs,
                      std::size_t scale, std::size_t shave) {
  for (const auto& pair : pairs) {
    if (pair.hr.width != scale * pair.lr.width || pair.hr.height != scale * pair.lr.height) {
      throw ConfigError("'" + pair.name + "': HR " + std::to_string(pair.hr.width) + "x" +
                        std::to_string(pair.hr.height) + " is not x" + std::to_string(scale) +
                        " the LR " + std::to_string(pair.lr.width) + "x" +
                        std::to_string(pair.lr.height));
    }
  }
  MetricReport report;
  for (const auto& pair : pairs) {
    const Image sr = quantize(upscale(pair.lr));
    report.add(pair.name, psnr_y(sr, pair.hr, shave), ssim_y(sr, pair.hr, shave));
  }
  return report;
}

template <typename T>
Image super_resolve(const ALDSR<T>& model, const Image& lr) {
  if (lr.channels != 3) throw DimensionError("super_resolve: expected an RGB image");
  const Tensor<T> input = stack_images<T>({&lr});
  return from_tensor(model.forward(input));
}

template <typename T>
MetricReport evaluate(const ALDSR<T>& model, const std::vector<EvalPair>& pairs,
                      std::size_t shave) {
  return evaluate([&](const Image& lr) { return super_resolve(model, lr); }, pairs,
                  model.spec().scale, shave);
}

Image bicubic_upscale(const Image& lr, std::size_t scale) {
  return bicubic_resize(lr, lr.width * scale, lr.height * scale);
}

#define ALDSR_INSTANTIATE_TRAINER(T)                                                       \
  template struct AdamState<T>;                                                            \
  template void adam_step(const ParameterList<T>&, AdamState<T>&, double);                 \
  template Tensor<T> stack_images(const std::vector<const Image*>&);                       \
  template class Trainer<T>;                                                               \
  template TrainResult train(ALDSR<T>&, const PairSet&, const TrainConfig&);               \
  template Image super_resolve(const ALDSR<T>&, const Image&);                             \
  template MetricReport evaluate(const ALDSR<T>&, const std::vector<EvalPair>&, std::size_t);

ALDSR_INSTANTIATE_TRAINER(float)
ALDSR_INSTANTIATE_TRAINER(double)

}  // namespace aldsr
