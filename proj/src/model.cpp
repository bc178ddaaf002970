#include "tmf/model.hpp"

#include <cmath>
#include <random>

#include "tmf/error.hpp"
#include "tmf/seed.hpp"

namespace tmf {

using ag::Shape;
using ag::Tensor;

namespace {

constexpr std::uint64_t kTagDropout = 0x64726f70u;

// Channel c of a width-n sinusoid at position pos.
double sinusoid(double pos, int c, int n) {
  const int i = c / 2;
  const double freq = std::pow(10000.0, -2.0 * i / n);
  return c % 2 == 0 ? std::sin(pos * freq) : std::cos(pos * freq);
}

template <typename T>
struct Forward {
  const ForecastModel<T>& model;
  ForwardOptions options;
  std::uint64_t calls = 0;

  const Tensor<T>& p(const std::string& name) const { return model.parameter(name); }

  Tensor<T> linear(const Tensor<T>& x, const std::string& prefix) const {
    return ag::add(ag::matmul(x, p(prefix + ".weight")), p(prefix + ".bias"));
  }

  Tensor<T> norm(const Tensor<T>& x, const std::string& prefix) const {
    return ag::layer_norm(x, p(prefix + ".gain"), p(prefix + ".bias"));
  }

  Tensor<T> drop(const Tensor<T>& x) {
    const double rate = model.config().dropout;
    if (!options.training || rate == 0.0) return x;
    return ag::dropout(x, rate, true, derive_seed(options.dropout_seed, kTagDropout, calls++));
  }

  Tensor<T> attention(const Tensor<T>& xq, const Tensor<T>& xkv, const std::string& prefix, bool causal) {
    const ModelConfig& c = model.config();
    const std::size_t B = xq.dim(0), S = xq.dim(1), Sk = xkv.dim(1);
    const std::size_t H = static_cast<std::size_t>(c.n_heads);
    const std::size_t dh = static_cast<std::size_t>(c.d_model / c.n_heads);
    auto heads = [&](const Tensor<T>& x, std::size_t len) {
      return ag::transpose(ag::reshape(x, {B, len, H, dh}), 1, 2);
    };
    const Tensor<T> q = heads(linear(xq, prefix + ".q"), S);
    const Tensor<T> k = heads(linear(xkv, prefix + ".k"), Sk);
    const Tensor<T> v = heads(linear(xkv, prefix + ".v"), Sk);
    const Tensor<T> scores = ag::scale(ag::matmul(q, ag::transpose(k, 2, 3)), T(1) / std::sqrt(T(dh)));
    const Tensor<T> weights = ag::softmax(scores, causal);
    const Tensor<T> mixed = ag::transpose(ag::matmul(weights, v), 1, 2);
    return linear(ag::reshape(mixed, {B, S, H * dh}), prefix + ".o");
  }

  Tensor<T> feed_forward(const Tensor<T>& x, const std::string& prefix) {
    Tensor<T> h = linear(x, prefix + ".ff1");
    h = model.config().activation == Activation::Relu ? ag::relu(h) : ag::gelu(h);
    return linear(h, prefix + ".ff2");
  }
};

template <typename T>
void check_finite(const Tensor<T>& x, const std::string& where) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) fail(ErrorCode::Numeric, "non-finite activation in " + where);
  }
}

}  // namespace

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.d_model = 64;
  c.n_heads = 4;
  c.n_layers_enc = 2;
  c.n_layers_dec = 2;
  c.d_ff = 128;
  return c;
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    require(v > 0, ErrorCode::Parameter, std::string(name) + " must be > 0, got " + std::to_string(v));
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(n_layers_enc, "n_layers_enc");
  positive(n_layers_dec, "n_layers_dec");
  positive(d_ff, "d_ff");
  positive(patch_size, "patch_size");
  positive(T_obs, "T_obs");
  positive(T_pred, "T_pred");
  positive(image_size, "image_size");
  require(d_model % n_heads == 0, ErrorCode::Parameter,
          "d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  require(image_size % patch_size == 0, ErrorCode::Parameter,
          "image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
              std::to_string(patch_size));
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::Parameter, "dropout must be in [0, 1)");
  require(activation == Activation::Gelu || activation == Activation::Relu, ErrorCode::Parameter,
          "unknown activation");
}

std::size_t ModelConfig::parameter_count() const {
  const std::size_t D = d_model, F = d_ff, P = patch_size;
  const std::size_t Le = n_layers_enc, Ld = n_layers_dec;
  return P * P * D + D + Le * (4 * D * D + 2 * D * F + 9 * D + F) + 2 * D +
         Ld * (8 * D * D + 2 * D * F + 15 * D + F) + 2 * D + 4 * D + 3 * D + 3;
}

template <typename T>
ForecastModel<T>::ForecastModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t D = config_.d_model, F = config_.d_ff, P = config_.patch_size;
  auto linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    add_parameter(name + ".weight", {in, out});
    add_parameter(name + ".bias", {out});
  };
  auto norm = [&](const std::string& name) {
    add_parameter(name + ".gain", {D});
    add_parameter(name + ".bias", {D});
  };
  auto attention = [&](const std::string& name) {
    for (const char* m : {".q", ".k", ".v", ".o"}) linear(name + m, D, D);
  };
  linear("patch", P * P, D);
  for (int l = 0; l < config_.n_layers_enc; ++l) {
    const std::string e = "enc." + std::to_string(l);
    norm(e + ".ln1");
    attention(e + ".attn");
    norm(e + ".ln2");
    linear(e + ".ff1", D, F);
    linear(e + ".ff2", F, D);
  }
  norm("enc.ln");
  for (int l = 0; l < config_.n_layers_dec; ++l) {
    const std::string d = "dec." + std::to_string(l);
    norm(d + ".ln1");
    attention(d + ".self");
    norm(d + ".ln2");
    attention(d + ".cross");
    norm(d + ".ln3");
    linear(d + ".ff1", D, F);
    linear(d + ".ff2", F, D);
  }
  norm("dec.ln");
  linear("embed", 3, D);
  linear("head", D, 3);
}

template <typename T>
void ForecastModel<T>::add_parameter(const std::string& name, Shape shape) {
  params_.push_back({name, Tensor<T>::zeros(std::move(shape), true)});
}

template <typename T>
ForecastModel<T> ForecastModel<T>::zeros(const ModelConfig& config) {
  return ForecastModel(config);
}

template <typename T>
ForecastModel<T> ForecastModel<T>::init_glorot(const ModelConfig& config, std::uint64_t seed) {
  ForecastModel model(config);
  std::mt19937_64 rng(seed);
  for (auto& [name, tensor] : model.params_) {
    auto values = tensor.mutable_data();
    if (name.ends_with(".gain")) {
      std::fill(values.begin(), values.end(), T(1));
    } else if (name.ends_with(".weight")) {
      const double bound = std::sqrt(6.0 / static_cast<double>(tensor.dim(0) + tensor.dim(1)));
      for (T& v : values) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        v = static_cast<T>((2.0 * u - 1.0) * bound);
      }
    }
  }
  return model;
}

template <typename T>
std::vector<Tensor<T>> ForecastModel<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

template <typename T>
const Tensor<T>& ForecastModel<T>::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  fail(ErrorCode::Contract, "no parameter named " + name);
}

template <typename T>
std::size_t ForecastModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

template <typename T>
template <typename U>
ForecastModel<U> ForecastModel<T>::cast() const {
  ForecastModel<U> out(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].tensor.data();
    auto dst = out.params_[i].tensor.mutable_data();
    for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
  }
  return out;
}

template <typename T>
Tensor<T> ForecastModel<T>::patchify(const Tensor<T>& frames) const {
  const std::size_t S = config_.image_size, P = config_.patch_size, G = S / P;
  const std::size_t T_obs = config_.T_obs;
  if (frames.rank() != 4 || frames.dim(1) != T_obs || frames.dim(2) != S || frames.dim(3) != S) {
    fail(ErrorCode::Shape, "frames have shape " + ag::to_string(frames.shape()) + ", expected [B, " +
                               std::to_string(T_obs) + ", " + std::to_string(S) + ", " + std::to_string(S) + "]");
  }
  const std::size_t B = frames.dim(0);
  std::vector<T> out(frames.size());
  const T* src = frames.data().data();
  std::size_t o = 0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T_obs; ++t) {
      const T* frame = src + (b * T_obs + t) * S * S;
      for (std::size_t pr = 0; pr < G; ++pr) {
        for (std::size_t pc = 0; pc < G; ++pc) {
          for (std::size_t i = 0; i < P; ++i) {
            const T* row = frame + (pr * P + i) * S + pc * P;
            std::copy(row, row + P, out.begin() + static_cast<std::ptrdiff_t>(o));
            o += P;
          }
        }
      }
    }
  }
  return Tensor<T>::from_data({B, T_obs * G * G, P * P}, std::move(out));
}

template <typename T>
Tensor<T> ForecastModel<T>::tokenize(const Tensor<T>& frames) const {
  Forward<T> f{*this, {}};
  return f.linear(patchify(frames), "patch");
}

template <typename T>
Tensor<T> ForecastModel<T>::encoder_position_table() const {
  const int D = config_.d_model, half = D / 2, Np = config_.patches_per_frame();
  const std::size_t N = static_cast<std::size_t>(config_.encoder_tokens());
  std::vector<T> table(N * D);
  for (std::size_t n = 0; n < N; ++n) {
    const double patch = static_cast<double>(n % Np), frame = static_cast<double>(n / Np);
    for (int c = 0; c < half; ++c) table[n * D + c] = static_cast<T>(sinusoid(patch, c, half));
    for (int c = half; c < D; ++c) table[n * D + c] = static_cast<T>(sinusoid(frame, c - half, D - half));
  }
  return Tensor<T>::from_data({N, static_cast<std::size_t>(D)}, std::move(table));
}

template <typename T>
Tensor<T> ForecastModel<T>::pos_encode(const Tensor<T>& tokens) const {
  return ag::add(tokens, encoder_position_table());
}

template <typename T>
Tensor<T> ForecastModel<T>::encode(const Tensor<T>& tokens, const ForwardOptions& options) const {
  const std::size_t D = config_.d_model;
  if (tokens.rank() != 3 || tokens.dim(2) != D) {
    fail(ErrorCode::Shape, "encoder tokens have shape " + ag::to_string(tokens.shape()) + ", expected [B, N, " +
                               std::to_string(D) + "]");
  }
  Forward<T> f{*this, options};
  Tensor<T> x = f.drop(tokens);
  for (int l = 0; l < config_.n_layers_enc; ++l) {
    const std::string e = "enc." + std::to_string(l);
    const Tensor<T> h = f.norm(x, e + ".ln1");
    x = ag::add(x, f.drop(f.attention(h, h, e + ".attn", false)));
    x = ag::add(x, f.drop(f.feed_forward(f.norm(x, e + ".ln2"), e)));
    check_finite(x, "encoder layer " + std::to_string(l));
  }
  return f.norm(x, "enc.ln");
}

template <typename T>
Tensor<T> ForecastModel<T>::encode_frames(const Tensor<T>& frames, const ForwardOptions& options) const {
  return encode(pos_encode(tokenize(frames)), options);
}

template <typename T>
Tensor<T> ForecastModel<T>::decode(const Tensor<T>& memory, const Tensor<T>& positions,
                                   const ForwardOptions& options) const {
  const std::size_t D = config_.d_model;
  if (positions.rank() != 3 || positions.dim(2) != 3 || memory.rank() != 3 || memory.dim(0) != positions.dim(0) ||
      memory.dim(2) != D) {
    fail(ErrorCode::Shape, "decoder inputs have shapes " + ag::to_string(memory.shape()) + " and " +
                               ag::to_string(positions.shape()));
  }
  const std::size_t L = positions.dim(1);
  std::vector<T> table(L * D);
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t c = 0; c < D; ++c) table[l * D + c] = static_cast<T>(sinusoid(double(l), int(c), int(D)));
  }
  Forward<T> f{*this, options};
  f.calls = 1u << 20;
  Tensor<T> x = f.drop(ag::add(f.linear(positions, "embed"), Tensor<T>::from_data({L, D}, std::move(table))));
  for (int l = 0; l < config_.n_layers_dec; ++l) {
    const std::string d = "dec." + std::to_string(l);
    const Tensor<T> h = f.norm(x, d + ".ln1");
    x = ag::add(x, f.drop(f.attention(h, h, d + ".self", true)));
    x = ag::add(x, f.drop(f.attention(f.norm(x, d + ".ln2"), memory, d + ".cross", false)));
    x = ag::add(x, f.drop(f.feed_forward(f.norm(x, d + ".ln3"), d)));
  }
  return f.linear(f.norm(x, "dec.ln"), "head");
}

template <typename T>
Tensor<T> ForecastModel<T>::decode_teacher_forced(const Tensor<T>& memory, const Tensor<T>& positions,
                                                  const ForwardOptions& options) const {
  const std::size_t L = static_cast<std::size_t>(config_.decoder_tokens());
  if (positions.rank() != 3 || positions.dim(1) != L) {
    fail(ErrorCode::Shape, "teacher-forced positions have shape " + ag::to_string(positions.shape()) +
                               ", expected [B, " + std::to_string(L) + ", 3]");
  }
  const Tensor<T> out = decode(memory, positions, options);
  return ag::slice(out, 1, static_cast<std::size_t>(config_.T_obs - 1), L);
}

template <typename T>
Tensor<T> ForecastModel<T>::decode_autoregressive(const Tensor<T>& memory, const Tensor<T>& observed) const {
  const std::size_t T_obs = config_.T_obs, T_pred = config_.T_pred;
  if (observed.rank() != 3 || observed.dim(1) != T_obs || observed.dim(2) != 3) {
    fail(ErrorCode::Shape, "observed positions have shape " + ag::to_string(observed.shape()) + ", expected [B, " +
                               std::to_string(T_obs) + ", 3]");
  }
  const std::size_t B = observed.dim(0);
  std::vector<std::vector<T>> context(B);
  for (std::size_t b = 0; b < B; ++b) {
    context[b].assign(observed.data().begin() + static_cast<std::ptrdiff_t>(b * T_obs * 3),
                      observed.data().begin() + static_cast<std::ptrdiff_t>((b + 1) * T_obs * 3));
  }
  std::vector<T> preds(B * T_pred * 3);
  for (std::size_t i = 0; i < T_pred; ++i) {
    const std::size_t L = T_obs + i;
    std::vector<T> flat;
    flat.reserve(B * L * 3);
    for (const auto& c : context) flat.insert(flat.end(), c.begin(), c.end());
    const Tensor<T> out = decode(memory, Tensor<T>::from_data({B, L, 3}, std::move(flat)));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t a = 0; a < 3; ++a) {
        const T v = out.data()[(b * L + L - 1) * 3 + a];
        preds[(b * T_pred + i) * 3 + a] = v;
        context[b].push_back(v);
      }
    }
  }
  return Tensor<T>::from_data({B, T_pred, 3}, std::move(preds));
}

template <typename T>
Tensor<T> ForecastModel<T>::forward_teacher_forced(const Tensor<T>& frames, const Tensor<T>& positions,
                                                   const ForwardOptions& options) const {
  return decode_teacher_forced(encode_frames(frames, options), positions, options);
}

template <typename T>
Tensor<T> ForecastModel<T>::predict(const Tensor<T>& frames, const Tensor<T>& observed) const {
  return decode_autoregressive(encode_frames(frames), observed);
}

template class ForecastModel<float>;
template class ForecastModel<double>;
template ForecastModel<float> ForecastModel<float>::cast<float>() const;
template ForecastModel<double> ForecastModel<float>::cast<double>() const;
template ForecastModel<float> ForecastModel<double>::cast<float>() const;
template ForecastModel<double> ForecastModel<double>::cast<double>() const;

}  // namespace tmf
