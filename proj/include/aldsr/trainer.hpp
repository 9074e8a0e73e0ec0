#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "aldsr/config.hpp"
#include "aldsr/dataset.hpp"
#include "aldsr/layers.hpp"
#include "aldsr/metrics.hpp"
#include "aldsr/models.hpp"

namespace aldsr {

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;

  // Zeroed moments shaped like `params`.
  static AdamState zeros_like(const ParameterList<T>& params);
};

// Bias-corrected Adam update from the gradients accumulated on `params`; a
// parameter without a gradient counts as a zero gradient. Every gradient is
// checked before anything is written, so a NaN/Inf aborts the whole step with
// a NumericError naming the parameter.
template <typename T>
void adam_step(const ParameterList<T>& params, AdamState<T>& state, double lr);

struct TrainConfig {
  std::size_t batch = 16;
  std::size_t patch = 48;
  double lr0 = 1e-4;
  std::size_t halve_epoch = 200;
  std::size_t epochs = 300;
  std::size_t iterations_per_epoch = 1000;
  // 0 runs the full epochs * iterations_per_epoch schedule.
  std::size_t max_iterations = 0;
  std::uint64_t seed = 1;
  bool augment = true;
  std::size_t checkpoint_every = 0;
  std::size_t eval_every = 0;

  std::size_t total_iterations() const;
  void validate() const;
};

double lr_schedule(std::size_t epoch, double lr0 = 1e-4, std::size_t halve_epoch = 200);

const std::set<std::string>& train_config_keys();
TrainConfig train_config_from(const KeyValueConfig& config);
KeyValueConfig train_config_to(const TrainConfig& config);

struct LossRow {
  std::size_t iter = 0;  // 1-based count of completed steps
  std::size_t epoch = 0;
  double lr = 0.0;
  double l1 = 0.0;
  bool operator==(const LossRow&) const = default;
};

inline constexpr const char* kLossCsvHeader = "iter,epoch,lr,l1";
std::string loss_csv_line(const LossRow& row);
std::string loss_csv(const std::vector<LossRow>& rows);

// Stacks patch members into [N,3,h,w].
template <typename T>
Tensor<T> stack_images(const std::vector<const Image*>& images);

template <typename T>
class Trainer {
 public:
  // Throws ConfigError when the model and data scales differ.
  Trainer(ALDSR<T>& model, const PairSet& data, const TrainConfig& config,
          const KeyValueConfig& model_config = {});

  LossRow step();
  // Steps until `iteration() == until`, calling on_step after each.
  std::vector<LossRow> run(std::size_t until, const std::function<void(const LossRow&)>& on_step = {});

  std::size_t iteration() const { return iteration_; }
  const AdamState<T>& optimizer() const { return adam_; }
  const ParameterList<T>& parameters() const { return params_; }
  std::uint64_t config_hash() const { return hash_; }

  // Writes <prefix>.aldw, <prefix>.opt.aldw and <prefix>.meta.
  void save_checkpoint(const std::filesystem::path& prefix) const;
  void load_checkpoint(const std::filesystem::path& prefix);

 private:
  ALDSR<T>& model_;
  const PairSet& data_;
  TrainConfig config_;
  ParameterList<T> params_;
  AdamState<T> adam_;
  PatchSampler sampler_;
  std::size_t iteration_ = 0;
  std::uint64_t hash_ = 0;
};

struct TrainResult {
  std::vector<LossRow> log;
};

template <typename T>
TrainResult train(ALDSR<T>& model, const PairSet& data, const TrainConfig& config);

struct EvalPair {
  std::string name;
  Image lr;
  Image hr;
};

// Loads <lr_dir>/<name>.png against <hr_dir>/<name>.png for every HR file.
// The HR image is cropped to `scale` times the LR size.
std::vector<EvalPair> load_eval_pairs(const std::filesystem::path& lr_dir,
                                      const std::filesystem::path& hr_dir, std::size_t scale);

using Upscaler = std::function<Image(const Image&)>;

// Upscales each LR image, quantizes to 8 bits and scores the luma with the
// given shave. Throws ConfigError if any HR is not `scale` times its LR.
MetricReport evaluate(const Upscaler& upscale, const std::vector<EvalPair>& pairs,
                      std::size_t scale, std::size_t shave);

template <typename T>
Image super_resolve(const ALDSR<T>& model, const Image& lr);

template <typename T>
MetricReport evaluate(const ALDSR<T>& model, const std::vector<EvalPair>& pairs,
                      std::size_t shave);

Image bicubic_upscale(const Image& lr, std::size_t scale);

}  // namespace aldsr
