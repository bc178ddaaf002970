#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tmf/dataset.hpp"
#include "tmf/model.hpp"

namespace tmf {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 16;
  double lr_min = 5e-7;
  double lr_max = 5e-5;
  int warmup_epochs = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  static TrainConfig full() { return {}; }
  // Same schedule shape with lr_max raised for the small toy models.
  static TrainConfig toy();

  // Throws Parameter.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Linear warmup lr_min -> lr_max over [0, warmup], cosine back to lr_min at
// `epochs`. Fractional epochs interpolate within an epoch.
double lr_at(const TrainConfig& config, double epoch);

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;
};

// One bias-corrected Adam update from the parameters' accumulated gradients;
// a parameter without a gradient is treated as having a zero gradient.
// Throws Numeric naming the parameter on a non-finite gradient.
template <typename T>
void adam_step(std::vector<NamedParameter<T>>& params, AdamState<T>& state, double lr, const TrainConfig& config);

// Per (sample, step): sqrt(mean of squared coordinate errors); then the mean
// over steps and samples. pred, target: B x T_pred x 3.
template <typename T>
ag::Tensor<T> rmse_loss(const ag::Tensor<T>& pred, const ag::Tensor<T>& target);

// Tensors for a batch of samples.
template <typename T>
struct Batch {
  ag::Tensor<T> frames;     // B x T_obs x H x W
  ag::Tensor<T> positions;  // B x (T_obs + T_pred - 1) x 3, teacher-forced decoder input
  ag::Tensor<T> observed;   // B x T_obs x 3
  ag::Tensor<T> targets;    // B x T_pred x 3
};

// Throws Contract when sample windows or frame sizes disagree with `config`.
// Without `with_targets` only frames and observed are filled and sample
// targets are never read.
template <typename T>
Batch<T> make_batch(std::span<const DrrSample* const> samples, const ModelConfig& config, bool with_targets = true);

struct EpochRecord {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double lr = 0.0;  // at the start of the epoch
  bool operator==(const EpochRecord&) const = default;
};

template <typename T>
struct TrainResult {
  ForecastModel<T> model;  // after the last epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
};

struct TrainOptions {
  // When set: history.csv, last.tmck and best.tmck are written here.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const EpochRecord&)> on_epoch;
};

// epochs x ceil(N / batch) teacher-forced steps on a per-epoch seeded shuffle.
// Throws Parameter on an empty sample list.
template <typename T>
TrainResult<T> train(ForecastModel<T> model, std::span<const DrrSample> samples, const TrainConfig& config,
                     const TrainOptions& options = {});

std::string history_csv(const std::vector<EpochRecord>& history);
void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace tmf
