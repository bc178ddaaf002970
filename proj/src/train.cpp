#include "tmf/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "fmt_double.hpp"
#include "tmf/error.hpp"
#include "tmf/seed.hpp"

namespace tmf {

namespace {

constexpr std::uint64_t kTagShuffle = 0x73687566u;
constexpr std::uint64_t kTagStepDropout = 0x73746570u;

}  // namespace

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.lr_max = 1e-3;
  return c;
}

void TrainConfig::validate() const {
  require(epochs >= 1, ErrorCode::Parameter, "epochs must be >= 1");
  require(batch_size >= 1, ErrorCode::Parameter, "batch_size must be >= 1");
  require(warmup_epochs >= 0 && warmup_epochs < epochs, ErrorCode::Parameter,
          "warmup_epochs must satisfy 0 <= warmup_epochs < epochs");
  require(lr_min > 0.0 && lr_min <= lr_max, ErrorCode::Parameter, "learning rates must satisfy 0 < lr_min <= lr_max");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, ErrorCode::Parameter,
          "Adam betas must be in [0, 1)");
  require(adam_eps > 0.0, ErrorCode::Parameter, "adam_eps must be > 0");
}

double lr_at(const TrainConfig& c, double epoch) {
  if (!(epoch >= 0.0 && epoch <= c.epochs)) {
    fail(ErrorCode::Parameter, "epoch " + std::to_string(epoch) + " outside [0, " + std::to_string(c.epochs) + "]");
  }
  const double w = c.warmup_epochs;
  if (epoch < w) {
    const double f = epoch / w;
    return c.lr_max * f + c.lr_min * (1.0 - f);
  }
  const double k = 0.5 * (1.0 + std::cos(std::numbers::pi * (epoch - w) / (c.epochs - w)));
  return c.lr_max * k + c.lr_min * (1.0 - k);
}

template <typename T>
void adam_step(std::vector<NamedParameter<T>>& params, AdamState<T>& state, double lr, const TrainConfig& c) {
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), {});
    state.v.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.size(), T(0));
      state.v[i].assign(params[i].tensor.size(), T(0));
    }
  }
  for (const auto& p : params) {
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(g)) fail(ErrorCode::Numeric, "non-finite gradient in parameter " + p.name);
    }
  }
  ++state.t;
  const T b1 = static_cast<T>(c.adam_beta1), b2 = static_cast<T>(c.adam_beta2);
  const T corr1 = T(1) - static_cast<T>(std::pow(c.adam_beta1, static_cast<double>(state.t)));
  const T corr2 = T(1) - static_cast<T>(std::pow(c.adam_beta2, static_cast<double>(state.t)));
  const T step = static_cast<T>(lr), eps = static_cast<T>(c.adam_eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    auto w = tensor.mutable_data();
    const auto g = tensor.grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      const T gk = g.empty() ? T(0) : g[k];
      m[k] = b1 * m[k] + (T(1) - b1) * gk;
      v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
      const T m_hat = m[k] / corr1;
      const T v_hat = v[k] / corr2;
      w[k] -= step * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
ag::Tensor<T> rmse_loss(const ag::Tensor<T>& pred, const ag::Tensor<T>& target) {
  if (pred.shape() != target.shape() || pred.rank() != 3 || pred.dim(2) != 3) {
    fail(ErrorCode::Shape, "rmse_loss: incompatible shapes " + ag::to_string(pred.shape()) + " and " +
                               ag::to_string(target.shape()));
  }
  const ag::Tensor<T> per_point = ag::scale(ag::sum_last(ag::square(ag::sub(pred, target))), T(1) / T(3));
  return ag::mean(ag::sqrt(per_point));
}

template <typename T>
Batch<T> make_batch(std::span<const DrrSample* const> samples, const ModelConfig& config, bool with_targets) {
  require(!samples.empty(), ErrorCode::Parameter, "empty batch");
  const std::size_t B = samples.size(), T_obs = config.T_obs, T_pred = config.T_pred;
  const std::size_t S = config.image_size, L = config.decoder_tokens();
  std::vector<T> frames(B * T_obs * S * S), positions(B * L * 3), observed(B * T_obs * 3), targets(B * T_pred * 3);
  for (std::size_t b = 0; b < B; ++b) {
    const DrrSample& s = *samples[b];
    if (s.window.t_obs != T_obs || s.window.t_pred != T_pred) {
      fail(ErrorCode::Contract, "sample window (" + std::to_string(s.window.t_obs) + ", " +
                                    std::to_string(s.window.t_pred) + ") does not match the model (" +
                                    std::to_string(T_obs) + ", " + std::to_string(T_pred) + ")");
    }
    if (static_cast<std::size_t>(s.height()) != S || static_cast<std::size_t>(s.width()) != S) {
      fail(ErrorCode::Contract, "sample frames are " + std::to_string(s.height()) + "x" + std::to_string(s.width()) +
                                    ", model expects " + std::to_string(S) + "x" + std::to_string(S));
    }
    const auto f = s.frames();
    std::transform(f.begin(), f.end(), frames.begin() + static_cast<std::ptrdiff_t>(b * T_obs * S * S),
                   [](float x) { return static_cast<T>(x); });
    for (std::size_t t = 0; t < T_obs; ++t) {
      for (int a = 0; a < 3; ++a) observed[(b * T_obs + t) * 3 + a] = static_cast<T>(s.observed[t][a]);
    }
    if (!with_targets) continue;
    for (std::size_t t = 0; t < L; ++t) {
      const Vec3& p = t < T_obs ? s.observed[t] : s.targets[t - T_obs];
      for (int a = 0; a < 3; ++a) positions[(b * L + t) * 3 + a] = static_cast<T>(p[a]);
    }
    for (std::size_t t = 0; t < T_pred; ++t) {
      for (int a = 0; a < 3; ++a) targets[(b * T_pred + t) * 3 + a] = static_cast<T>(s.targets[t][a]);
    }
  }
  Batch<T> out;
  out.frames = ag::Tensor<T>::from_data({B, T_obs, S, S}, std::move(frames));
  out.observed = ag::Tensor<T>::from_data({B, T_obs, 3}, std::move(observed));
  if (with_targets) {
    out.positions = ag::Tensor<T>::from_data({B, L, 3}, std::move(positions));
    out.targets = ag::Tensor<T>::from_data({B, T_pred, 3}, std::move(targets));
  }
  return out;
}

template <typename T>
TrainResult<T> train(ForecastModel<T> model, std::span<const DrrSample> samples, const TrainConfig& config,
                     const TrainOptions& options) {
  config.validate();
  require(!samples.empty(), ErrorCode::Parameter, "training set is empty");
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);

  const std::size_t n = samples.size(), batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps = (n + batch - 1) / batch;
  std::vector<std::size_t> order(n);
  AdamState<T> adam;
  TrainResult<T> result{model, {}, 0};
  double best = std::numeric_limits<double>::infinity();
  std::uint64_t global_step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::mt19937_64 rng(derive_seed(config.seed, kTagShuffle, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const DrrSample*> members;
      for (std::size_t i = s * batch; i < std::min(n, (s + 1) * batch); ++i) members.push_back(&samples[order[i]]);
      const Batch<T> b = make_batch<T>(members, model.config());
      for (auto& p : model.parameters()) p.tensor.zero_grad();

      const ForwardOptions fwd{true, derive_seed(config.seed, kTagStepDropout, global_step)};
      double loss_value = 0.0;
      {
        ag::Tape<T> tape;
        const ag::Tensor<T> loss = rmse_loss(model.forward_teacher_forced(b.frames, b.positions, fwd), b.targets);
        loss_value = static_cast<double>(loss.item());
        if (!std::isfinite(loss_value)) {
          fail(ErrorCode::Numeric, "non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                       std::to_string(s));
        }
        tape.backward(loss);
      }
      const double progress = epoch + static_cast<double>(s) / static_cast<double>(steps);
      adam_step(model.parameters(), adam, lr_at(config, progress), config);
      loss_sum += loss_value * static_cast<double>(members.size());
      ++global_step;
    }
    for (auto& p : model.parameters()) p.tensor.zero_grad();

    const EpochRecord record{epoch + 1, loss_sum / static_cast<double>(n), lr_at(config, epoch)};
    result.history.push_back(record);
    if (record.mean_loss < best) {
      best = record.mean_loss;
      result.best_epoch = record.epoch;
      if (options.out_dir) save_checkpoint(model, *options.out_dir / "best.tmck");
    }
    if (options.on_epoch) options.on_epoch(record);
  }
  result.model = std::move(model);
  if (options.out_dir) {
    save_checkpoint(result.model, *options.out_dir / "last.tmck");
    write_history_csv(result.history, *options.out_dir / "history.csv");
  }
  return result;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,mean_loss,lr\n";
  for (const auto& r : history) os << r.epoch << ',' << format_double(r.mean_loss) << ',' << format_double(r.lr) << '\n';
  return os.str();
}

void write_history_csv(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) fail(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  os << history_csv(history);
  if (!os) fail(ErrorCode::Io, "failed writing " + path.string());
}

#define TMF_INSTANTIATE(T)                                                                                     \
  template void adam_step(std::vector<NamedParameter<T>>&, AdamState<T>&, double, const TrainConfig&);         \
  template ag::Tensor<T> rmse_loss(const ag::Tensor<T>&, const ag::Tensor<T>&);                                \
  template Batch<T> make_batch(std::span<const DrrSample* const>, const ModelConfig&, bool);                   \
  template TrainResult<T> train(ForecastModel<T>, std::span<const DrrSample>, const TrainConfig&,              \
                                const TrainOptions&);

TMF_INSTANTIATE(float)
TMF_INSTANTIATE(double)

#undef TMF_INSTANTIATE

}  // namespace tmf
