#include <cmath>
#include <cstring>
#include <functional>
#include <optional>
#include <random>

#include "doctest.h"
#include "tmf/error.hpp"
#include "tmf/model.hpp"

using namespace tmf;
using namespace tmf::ag;
using TD = Tensor<double>;
using TF = Tensor<float>;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.d_ff = 32;
  c.patch_size = 16;
  c.dropout = 0.0;
  return c;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(u(rng));
  return Tensor<T>::from_data(std::move(shape), std::move(v));
}

std::optional<ErrorCode> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

}  // namespace

TEST_CASE("patchify yields 256 tokens of 256 pixels for 16 frames of 64x64") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 1);
  const TD p = model.patchify(random_tensor<double>({2, 16, 64, 64}, 2));
  CHECK(p.shape() == Shape{2, 256, 256});
  const TD t = model.tokenize(random_tensor<double>({1, 16, 64, 64}, 3));
  CHECK(t.shape() == Shape{1, 256, 16});
}

TEST_CASE("patchify orders tokens by frame then row then column") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 1);
  std::vector<double> v(16 * 64 * 64);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const TD p = model.patchify(TD::from_data({1, 16, 64, 64}, v));
  const auto at = [&](std::size_t token, std::size_t k) { return p.data()[token * 256 + k]; };
  CHECK(at(0, 0) == 0.0);
  CHECK(at(0, 16) == 64.0);
  CHECK(at(1, 0) == 16.0);
  CHECK(at(4, 0) == 16.0 * 64.0);
  CHECK(at(16, 0) == 4096.0);
  CHECK(at(17, 255) == 4096.0 + 15 * 64 + 16 + 15);
}

TEST_CASE("zero frames give zero tokens from a fresh model") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 1);
  const TD tokens = model.tokenize(TD::zeros({1, 16, 64, 64}));
  for (double x : tokens.data()) CHECK(x == 0.0);
}

TEST_CASE("permuting frames permutes token blocks") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 4);
  const TD frames = random_tensor<double>({1, 16, 64, 64}, 5);
  std::vector<double> swapped(frames.data().begin(), frames.data().end());
  const std::size_t F = 64 * 64;
  std::swap_ranges(swapped.begin() + 2 * F, swapped.begin() + 3 * F, swapped.begin() + 9 * F);
  const TD a = model.tokenize(frames);
  const TD b = model.tokenize(TD::from_data({1, 16, 64, 64}, swapped));
  const std::size_t block = 16 * 16;
  for (std::size_t k = 0; k < block; ++k) {
    CHECK(a.data()[2 * block + k] == b.data()[9 * block + k]);
    CHECK(a.data()[9 * block + k] == b.data()[2 * block + k]);
    CHECK(a.data()[k] == b.data()[k]);
  }
}

TEST_CASE("positional table separates patch and frame halves") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 1);
  const TD table = model.encoder_position_table();
  CHECK(table.shape() == Shape{256, 16});
  for (double x : table.data()) {
    CHECK(x >= -1.0);
    CHECK(x <= 1.0);
  }
  const auto row = [&](std::size_t n) {
    return std::vector<double>(table.data().begin() + n * 16, table.data().begin() + (n + 1) * 16);
  };
  const auto a = row(3), b = row(3 + 5 * 16), c = row(3 + 16);
  for (int i = 0; i < 8; ++i) CHECK(a[i] == b[i]);
  bool frame_half_differs = false;
  for (int i = 8; i < 16; ++i) frame_half_differs |= (a[i] != c[i]);
  CHECK(frame_half_differs);
  const auto d = row(4);
  for (int i = 8; i < 16; ++i) CHECK(a[i] == d[i]);
  CHECK(table.data()[0] == 0.0);
  CHECK(table.data()[1] == 1.0);
  const auto again = model.encoder_position_table();
  CHECK(std::equal(table.data().begin(), table.data().end(), again.data().begin()));
}

TEST_CASE("encoder with zero weights reduces to the final layer norm") {
  auto model = ForecastModel<double>::zeros(small_config());
  for (auto& [name, tensor] : model.parameters()) {
    if (name.ends_with(".gain")) {
      for (double& x : tensor.mutable_data()) x = 1.0;
    }
  }
  const TD tokens = random_tensor<double>({1, 256, 16}, 6);
  const TD out = model.encode(tokens);
  REQUIRE(out.shape() == Shape{1, 256, 16});
  for (std::size_t n = 0; n < 256; ++n) {
    const double* x = tokens.data().data() + n * 16;
    double mean = 0.0, var = 0.0;
    for (int i = 0; i < 16; ++i) mean += x[i] / 16.0;
    for (int i = 0; i < 16; ++i) var += (x[i] - mean) * (x[i] - mean) / 16.0;
    for (int i = 0; i < 16; ++i) {
      CHECK(out.data()[n * 16 + i] == doctest::Approx((x[i] - mean) / std::sqrt(var + 1e-5)).epsilon(1e-12));
    }
  }
}

TEST_CASE("encode is deterministic and shape-checked") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 7);
  const TD frames = random_tensor<double>({2, 16, 64, 64}, 8);
  const TD a = model.encode_frames(frames);
  const TD b = model.encode_frames(frames);
  CHECK(a.shape() == Shape{2, 256, 16});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK(code_of([&] { model.encode(TD::zeros({1, 256, 15})); }) == ErrorCode::Shape);
  CHECK(code_of([&] { model.patchify(TD::zeros({1, 15, 64, 64})); }) == ErrorCode::Shape);
}

TEST_CASE("decoder outputs never depend on later inputs") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 9);
  const TD memory = model.encode_frames(random_tensor<double>({1, 16, 64, 64}, 10));
  const TD positions = random_tensor<double>({1, 20, 3}, 11);
  const TD base = model.decode(memory, positions);
  for (std::size_t k : {1u, 7u, 15u, 19u}) {
    std::vector<double> p(positions.data().begin(), positions.data().end());
    for (std::size_t a = 0; a < 3; ++a) p[k * 3 + a] += 100.0;
    const TD out = model.decode(memory, TD::from_data({1, 20, 3}, p));
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t a = 0; a < 3; ++a) CHECK(out.data()[j * 3 + a] == base.data()[j * 3 + a]);
    }
    bool changed = false;
    for (std::size_t a = 0; a < 3; ++a) changed |= out.data()[k * 3 + a] != base.data()[k * 3 + a];
    CHECK(changed);
  }
}

TEST_CASE("teacher-forced step 0 equals autoregressive step 0") {
  const auto model = ForecastModel<double>::init_glorot(small_config(), 12);
  const TD memory = model.encode_frames(random_tensor<double>({2, 16, 64, 64}, 13));
  const TD positions = random_tensor<double>({2, 20, 3}, 14);
  std::vector<double> obs;
  for (std::size_t b = 0; b < 2; ++b) {
    obs.insert(obs.end(), positions.data().begin() + b * 60, positions.data().begin() + b * 60 + 48);
  }
  const TD tf = model.decode_teacher_forced(memory, positions);
  const TD ar = model.decode_autoregressive(memory, TD::from_data({2, 16, 3}, obs));
  REQUIRE(tf.shape() == Shape{2, 5, 3});
  REQUIRE(ar.shape() == Shape{2, 5, 3});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t a = 0; a < 3; ++a) {
      CHECK(tf.data()[b * 15 + a] == doctest::Approx(ar.data()[b * 15 + a]).epsilon(1e-12));
    }
  }
  CHECK(code_of([&] { model.decode_teacher_forced(memory, TD::zeros({2, 19, 3})); }) == ErrorCode::Shape);
}

TEST_CASE("autoregressive prediction is deterministic") {
  const auto model = ForecastModel<float>::init_glorot(small_config(), 15);
  const TF frames = random_tensor<float>({2, 16, 64, 64}, 16);
  const TF observed = random_tensor<float>({2, 16, 3}, 17);
  const TF a = model.predict(frames, observed);
  const TF b = model.predict(frames, observed);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("a model with only a head bias predicts that constant") {
  auto model = ForecastModel<double>::zeros(small_config());
  for (auto& [name, tensor] : model.parameters()) {
    if (name == "head.bias") {
      auto d = tensor.mutable_data();
      d[0] = 1.5;
      d[1] = -2.0;
      d[2] = 0.25;
    }
  }
  const TD pred = model.predict(random_tensor<double>({1, 16, 64, 64}, 18), random_tensor<double>({1, 16, 3}, 19));
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(pred.data()[i * 3 + 0] == 1.5);
    CHECK(pred.data()[i * 3 + 1] == -2.0);
    CHECK(pred.data()[i * 3 + 2] == 0.25);
  }
}

TEST_CASE("glorot init matches bound and variance") {
  ModelConfig c = small_config();
  c.d_model = 512;
  c.n_heads = 8;
  c.d_ff = 512;
  const auto model = ForecastModel<float>::init_glorot(c, 20);
  const TF& w = model.parameter("enc.0.attn.q.weight");
  REQUIRE(w.shape() == Shape{512, 512});
  const double bound = std::sqrt(6.0 / 1024.0);
  CHECK(bound == doctest::Approx(0.076547).epsilon(1e-5));
  double sum = 0.0, sq = 0.0;
  for (float x : w.data()) {
    CHECK(std::abs(x) <= bound);
    sum += x;
    sq += double(x) * x;
  }
  const double n = static_cast<double>(w.size());
  const double var = sq / n - (sum / n) * (sum / n);
  CHECK(std::abs(var - 2.0 / 1024.0) < 0.1 * 2.0 / 1024.0);
  for (float x : model.parameter("enc.0.attn.q.bias").data()) CHECK(x == 0.0f);
  for (float x : model.parameter("enc.0.ln1.gain").data()) CHECK(x == 1.0f);
  const auto again = ForecastModel<float>::init_glorot(c, 20);
  const auto& w2 = again.parameter("enc.0.attn.q.weight");
  CHECK(std::equal(w.data().begin(), w.data().end(), w2.data().begin()));
}

TEST_CASE("parameter count follows the closed form") {
  for (ModelConfig c : {small_config(), ModelConfig::toy()}) {
    const auto model = ForecastModel<float>::zeros(c);
    std::size_t n = 0;
    for (const auto& p : model.parameters()) n += p.tensor.size();
    CHECK(n == c.parameter_count());
    CHECK(model.parameter_count() == n);
  }
  CHECK(ModelConfig::full().parameter_count() > 40'000'000u);
}

TEST_CASE("model config validation") {
  ModelConfig c = small_config();
  c.n_heads = 3;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::Parameter);
  c = small_config();
  c.patch_size = 24;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::Parameter);
  c = small_config();
  c.dropout = 1.0;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::Parameter);
}

TEST_CASE("checkpoint bytes round-trip exactly") {
  const auto model = ForecastModel<float>::init_glorot(small_config(), 21);
  const auto bytes = serialize_checkpoint(model);
  const auto loaded = deserialize_checkpoint(bytes);
  CHECK(loaded.config() == model.config());
  CHECK(serialize_checkpoint(loaded) == bytes);
  const TF frames = random_tensor<float>({1, 16, 64, 64}, 22);
  const TF observed = random_tensor<float>({1, 16, 3}, 23);
  const TF a = model.predict(frames, observed);
  const TF b = loaded.predict(frames, observed);
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}

TEST_CASE("corrupted checkpoints report their category") {
  const auto bytes = serialize_checkpoint(ForecastModel<float>::init_glorot(small_config(), 24));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(code_of([&] { deserialize_checkpoint(bad_magic); }) == ErrorCode::Format);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 7);
  CHECK(code_of([&] { deserialize_checkpoint(truncated); }) == ErrorCode::Format);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(code_of([&] { deserialize_checkpoint(trailing); }) == ErrorCode::Format);
  auto tampered = bytes;
  const std::uint32_t d_model = 32;
  std::memcpy(tampered.data() + 6, &d_model, 4);
  CHECK(code_of([&] { deserialize_checkpoint(tampered); }) == ErrorCode::ConfigMismatch);
  auto heads = bytes;
  const std::uint32_t three = 3;
  std::memcpy(heads.data() + 10, &three, 4);
  CHECK(code_of([&] { deserialize_checkpoint(heads); }) == ErrorCode::ConfigMismatch);
}

TEST_CASE("load_checkpoint checks the expected config") {
  const auto model = ForecastModel<float>::init_glorot(small_config(), 25);
  const auto path = std::filesystem::temp_directory_path() / "tmf_unit_model.tmck";
  save_checkpoint(model, path);
  CHECK(load_checkpoint(path, small_config()).config() == small_config());
  ModelConfig other = small_config();
  other.d_ff = 64;
  CHECK(code_of([&] { load_checkpoint(path, other); }) == ErrorCode::ConfigMismatch);
  std::filesystem::remove(path);
  CHECK(code_of([&] { load_checkpoint(path); }) == ErrorCode::InputNotFound);
}
