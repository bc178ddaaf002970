#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "tmf/autograd.hpp"

namespace tmf {

enum class Activation : std::uint8_t { Gelu = 0, Relu = 1 };

struct ModelConfig {
  int d_model = 512;
  int n_heads = 8;
  int n_layers_enc = 6;
  int n_layers_dec = 6;
  int d_ff = 2048;
  int patch_size = 16;
  int T_obs = 16;
  int T_pred = 5;
  double dropout = 0.1;
  int image_size = 64;
  Activation activation = Activation::Gelu;

  static ModelConfig full() { return {}; }
  // d_model 64, 4 heads, 2 + 2 layers, d_ff 128.
  static ModelConfig toy();

  // Throws Parameter.
  void validate() const;

  int patches_per_side() const { return image_size / patch_size; }
  int patches_per_frame() const { return patches_per_side() * patches_per_side(); }
  int encoder_tokens() const { return T_obs * patches_per_frame(); }
  int decoder_tokens() const { return T_obs + T_pred - 1; }

  // P^2 D + D + Le (4D^2 + 2DF + 9D + F) + 2D + Ld (8D^2 + 2DF + 15D + F) + 2D + 4D + 3D + 3
  std::size_t parameter_count() const;

  bool operator==(const ModelConfig&) const = default;
};

struct ForwardOptions {
  bool training = false;
  std::uint64_t dropout_seed = 0;
};

template <typename T>
struct NamedParameter {
  std::string name;
  ag::Tensor<T> tensor;
};

// Encoder over patch tokens of the observed frames, decoder over embedded
// normalized 3D positions. Linear weights are stored (in, out).
template <typename T>
class ForecastModel {
 public:
  // Glorot-uniform weights, zero biases, unit LayerNorm gains.
  static ForecastModel init_glorot(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  std::vector<ag::Tensor<T>> parameter_tensors() const;
  const ag::Tensor<T>& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  // Deep copy in another precision.
  template <typename U>
  ForecastModel<U> cast() const;

  // frames: B x T_obs x H x W -> B x (T_obs * N_patch) x (P * P), token order (t, row, col).
  ag::Tensor<T> patchify(const ag::Tensor<T>& frames) const;
  // Linear patch projection, no positional encoding.
  ag::Tensor<T> tokenize(const ag::Tensor<T>& frames) const;
  // Adds the fixed spatio-temporal sinusoid table.
  ag::Tensor<T> pos_encode(const ag::Tensor<T>& tokens) const;
  // (T_obs * N_patch) x d_model; first half encodes patch index, second half frame index.
  ag::Tensor<T> encoder_position_table() const;

  // Throws Numeric naming the layer when a non-finite value appears.
  ag::Tensor<T> encode(const ag::Tensor<T>& tokens, const ForwardOptions& options = {}) const;
  // frames -> memory: tokenize, pos_encode, encode.
  ag::Tensor<T> encode_frames(const ag::Tensor<T>& frames, const ForwardOptions& options = {}) const;

  // Raw decoder: B x L x 3 positions -> B x L x 3 outputs; output l attends to inputs <= l.
  ag::Tensor<T> decode(const ag::Tensor<T>& memory, const ag::Tensor<T>& positions,
                       const ForwardOptions& options = {}) const;
  // positions: B x (T_obs + T_pred - 1) x 3 (observed then targets[0 .. T_pred-2]) -> B x T_pred x 3.
  ag::Tensor<T> decode_teacher_forced(const ag::Tensor<T>& memory, const ag::Tensor<T>& positions,
                                      const ForwardOptions& options = {}) const;
  // observed: B x T_obs x 3 -> B x T_pred x 3, feeding back its own outputs.
  ag::Tensor<T> decode_autoregressive(const ag::Tensor<T>& memory, const ag::Tensor<T>& observed) const;

  ag::Tensor<T> forward_teacher_forced(const ag::Tensor<T>& frames, const ag::Tensor<T>& positions,
                                       const ForwardOptions& options = {}) const;
  ag::Tensor<T> predict(const ag::Tensor<T>& frames, const ag::Tensor<T>& observed) const;

  // Used by the checkpoint reader; parameters are zero-filled.
  static ForecastModel zeros(const ModelConfig& config);

 private:
  template <typename>
  friend class ForecastModel;

  explicit ForecastModel(const ModelConfig& config);
  void add_parameter(const std::string& name, ag::Shape shape);

  ModelConfig config_;
  std::vector<NamedParameter<T>> params_;
};

// TMCK: magic, u16 version, config block, then named f32 parameter records.
template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const ForecastModel<T>& model);
ForecastModel<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes);
template <typename T>
void save_checkpoint(const ForecastModel<T>& model, const std::filesystem::path& path);
ForecastModel<float> load_checkpoint(const std::filesystem::path& path);
// Throws ConfigMismatch when the embedded config differs from `expected`.
ForecastModel<float> load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace tmf
