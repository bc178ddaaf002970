#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "tmf/error.hpp"
#include "tmf/train.hpp"

using namespace tmf;
using namespace tmf::ag;
using TD = Tensor<double>;

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers_enc = 1;
  c.n_layers_dec = 1;
  c.d_ff = 16;
  c.patch_size = 16;
  c.dropout = 0.1;
  return c;
}

const SessionDataset& tiny_dataset() {
  static const SessionDataset ds = build_training_set(generate_phantom(test::small_spec(), 3, "T"), 26, 4);
  return ds;
}

TrainConfig tiny_train() {
  TrainConfig c = TrainConfig::toy();
  c.epochs = 3;
  c.warmup_epochs = 1;
  c.batch_size = 2;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("rmse of identical tensors is zero") {
  const TD a = TD::from_data({1, 2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(rmse_loss(a, a).item() == 0.0);
}

TEST_CASE("rmse of a unit offset is one") {
  const TD a = TD::zeros({2, 5, 3});
  CHECK(rmse_loss(a, TD::full({2, 5, 3}, 1.0)).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("rmse averages per-point roots") {
  const TD p = TD::from_data({1, 2, 3}, {5, 0, 0, 0, 0, 0});
  const TD t = TD::zeros({1, 2, 3});
  CHECK(rmse_loss(p, t).item() == doctest::Approx(0.5 * std::sqrt(25.0 / 3.0)).epsilon(1e-15));
  const TD q = TD::from_data({1, 1, 3}, {5, 0, 0});
  CHECK(rmse_loss(q, TD::zeros({1, 1, 3})).item() == doctest::Approx(2.8868).epsilon(1e-4));
  CHECK_THROWS_AS(rmse_loss(q, TD::zeros({1, 2, 3})), Error);
}

TEST_CASE("learning rate schedule values") {
  const TrainConfig c = TrainConfig::full();
  CHECK(lr_at(c, 0.0) == 5e-7);
  CHECK(lr_at(c, 10.0) == 5e-5);
  CHECK(lr_at(c, 5.0) == doctest::Approx(2.525e-5).epsilon(1e-12));
  CHECK(lr_at(c, 55.0) == doctest::Approx(2.525e-5).epsilon(1e-12));
  CHECK(std::abs(lr_at(c, 100.0) - 5e-7) < 1e-20);
  CHECK_THROWS_AS(lr_at(c, 101.0), Error);
  for (double e = 10.0; e < 100.0; e += 1.0) CHECK(lr_at(c, e + 1.0) <= lr_at(c, e));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.warmup_epochs = 100;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.lr_min = 1.0;
  CHECK_THROWS_AS(c.validate(), Error);
  c = {};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("first Adam step moves by lr against the gradient sign") {
  std::vector<NamedParameter<double>> params{{"w", TD::from_data({3}, {0.0, 0.0, 0.0}, true)},
                                             {"u", TD::from_data({2}, {1.0, 1.0}, true)}};
  const TD g = TD::from_data({3}, {0.3, -7.0, 0.0});
  {
    Tape<double> tape;
    tape.backward(sum(mul(params[0].tensor, g)));
  }
  params[1].tensor.zero_grad();
  AdamState<double> state;
  TrainConfig c;
  adam_step(params, state, 1e-3, c);
  const auto w = params[0].tensor.data();
  CHECK(w[0] == doctest::Approx(-1e-3).epsilon(1e-6));
  CHECK(w[1] == doctest::Approx(1e-3).epsilon(1e-6));
  CHECK(w[2] == 0.0);
  for (double x : params[1].tensor.data()) CHECK(x == 1.0);
  CHECK(state.t == 1);
}

TEST_CASE("identical parameters receive identical updates") {
  std::vector<NamedParameter<double>> params{{"a", TD::from_data({2}, {0.5, -0.5}, true)},
                                             {"b", TD::from_data({2}, {0.5, -0.5}, true)}};
  AdamState<double> state;
  for (int step = 0; step < 5; ++step) {
    for (auto& p : params) p.tensor.zero_grad();
    {
      Tape<double> tape;
      tape.backward(add(sum(square(params[0].tensor)), sum(square(params[1].tensor))));
    }
    adam_step(params, state, 1e-2, TrainConfig{});
  }
  for (std::size_t k = 0; k < 2; ++k) CHECK(params[0].tensor.data()[k] == params[1].tensor.data()[k]);
  CHECK(std::abs(params[0].tensor.data()[0]) < 0.5);
}

TEST_CASE("Adam rejects non-finite gradients") {
  std::vector<NamedParameter<double>> params{{"w", TD::from_data({1}, {1.0}, true)}};
  {
    Tape<double> tape;
    tape.backward(sum(scale(params[0].tensor, std::numeric_limits<double>::infinity())));
  }
  AdamState<double> state;
  try {
    adam_step(params, state, 1e-3, TrainConfig{});
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Numeric);
    CHECK(std::string(e.what()).find("w") != std::string::npos);
  }
}

TEST_CASE("make_batch without targets leaves them undefined") {
  const auto& ds = tiny_dataset();
  std::vector<const DrrSample*> ptrs{&ds.samples[0], &ds.samples[1]};
  const Batch<float> full = make_batch<float>(ptrs, tiny_model());
  CHECK(full.frames.shape() == Shape{2, 16, 64, 64});
  CHECK(full.positions.shape() == Shape{2, 20, 3});
  CHECK(full.targets.shape() == Shape{2, 5, 3});
  CHECK(full.positions.data()[16 * 3] == static_cast<float>(ds.samples[0].targets[0][0]));
  const Batch<float> bare = make_batch<float>(ptrs, tiny_model(), false);
  CHECK(bare.observed.shape() == Shape{2, 16, 3});
  CHECK_FALSE(bare.targets.defined());
  CHECK_FALSE(bare.positions.defined());
  ModelConfig other = tiny_model();
  other.T_pred = 4;
  try {
    make_batch<float>(ptrs, other);
    FAIL("expected a contract error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Contract);
  }
}

TEST_CASE("training writes a full history and is deterministic") {
  const auto& ds = tiny_dataset();
  const auto dir = test::temp_dir("train");
  std::vector<int> seen;
  TrainOptions options;
  options.out_dir = dir;
  options.on_epoch = [&](const EpochRecord& r) { seen.push_back(r.epoch); };
  const auto a = train(ForecastModel<float>::init_glorot(tiny_model(), 1), ds.samples, tiny_train(), options);
  const auto b = train(ForecastModel<float>::init_glorot(tiny_model(), 1), ds.samples, tiny_train());
  REQUIRE(a.history.size() == 3);
  CHECK(seen == std::vector<int>{1, 2, 3});
  CHECK(a.history == b.history);
  CHECK(a.history[0].lr == lr_at(tiny_train(), 0.0));
  CHECK(a.history[1].lr == lr_at(tiny_train(), 1.0));
  CHECK(serialize_checkpoint(a.model) == serialize_checkpoint(b.model));
  CHECK(a.best_epoch >= 1);
  CHECK(a.best_epoch <= 3);
  CHECK(std::filesystem::exists(dir / "best.tmck"));
  CHECK(std::filesystem::exists(dir / "last.tmck"));
  std::ifstream is(dir / "history.csv");
  std::stringstream text;
  text << is.rdbuf();
  CHECK(text.str() == history_csv(a.history));
  CHECK(test::read_bytes(dir / "last.tmck") == serialize_checkpoint(a.model));
  CHECK_THROWS_AS(train(ForecastModel<float>::init_glorot(tiny_model(), 1), std::span<const DrrSample>{}, tiny_train()),
                  Error);
}
