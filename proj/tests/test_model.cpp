#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "freetrain/model.hpp"
#include "freetrain/rng.hpp"
#include "support/oracles.hpp"

using namespace freetrain;

namespace {

ModelSpec small_mlp() {
  ModelSpec s;
  s.kind = ModelKind::Mlp;
  s.input_shape = {784};
  s.classes = 10;
  s.hidden = {128};
  return s;
}

ModelSpec small_convnet() {
  ModelSpec s;
  s.kind = ModelKind::Convnet;
  s.input_shape = {1, 28, 28};
  s.classes = 10;
  s.conv_channels = {16, 32};
  s.hidden = {64};
  s.kernel = 3;
  s.padding = 1;
  s.pool_window = 2;
  return s;
}

Tensor random_batch(const ModelSpec& spec, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> shape{batch};
  shape.insert(shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  Tensor x = Tensor::zeros(shape);
  for (auto& v : x.data) v = rng.uniform(0.0f, 1.0f);
  return x;
}

std::vector<int> random_labels(std::size_t batch, std::size_t classes, Rng& rng) {
  std::vector<int> y(batch);
  for (auto& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

ParamSet zeroed(ParamSet p) {
  for (auto& [name, t] : p.values) std::fill(t.data.begin(), t.data.end(), 0.0f);
  return p;
}

}  // namespace

TEST_CASE("mlp 784-128-10 shapes") {
  Model model(small_mlp());
  ParamSet params = init_params(model.spec(), 1);
  Rng rng(2);
  Tensor x = random_batch(model.spec(), 32, rng);
  CostLedger ledger;
  ModelForward fwd = model.forward(params, x, random_labels(32, 10, rng), ledger);
  CHECK(fwd.tape.value(fwd.logits).shape == std::vector<std::size_t>{32, 10});
  CHECK(fwd.tape.value(fwd.loss).numel() == 1);
  CHECK(ledger.forward_count() == 1);
  CHECK(std::isfinite(fwd.tape.value(fwd.loss)[0]));
}

TEST_CASE("convnet 16/32 channels on 28x28 shapes") {
  Model model(small_convnet());
  ParamSet params = init_params(model.spec(), 1);
  Rng rng(3);
  Tensor x = random_batch(model.spec(), 4, rng);
  CostLedger ledger;
  ModelForward fwd = model.forward(params, x, random_labels(4, 10, rng), ledger);
  CHECK(fwd.tape.value(fwd.logits).shape == std::vector<std::size_t>{4, 10});
  CHECK(std::isfinite(fwd.tape.value(fwd.loss)[0]));
}

TEST_CASE("zero weights give uniform logits and loss ln C") {
  Model model(small_mlp());
  ParamSet params = zeroed(init_params(model.spec(), 1));
  Rng rng(4);
  Tensor x = random_batch(model.spec(), 8, rng);
  CostLedger ledger;
  ModelForward fwd = model.forward(params, x, random_labels(8, 10, rng), ledger);
  const Tensor& z = fwd.tape.value(fwd.logits);
  for (float v : z.data) CHECK(v == 0.0f);
  CHECK(fwd.tape.value(fwd.loss)[0] ==
        doctest::Approx(std::log(10.0)).epsilon(1e-6));

  // With all logits tied, prediction falls to the lowest class index.
  std::vector<int> pred = model.predict(params, x, ledger);
  for (int p : pred) CHECK(p == 0);

  // CW margin of a tied row is zero.
  ModelForward cw = model.forward(params, x, random_labels(8, 10, rng), ledger,
                                  LossKind::CwMargin);
  CHECK(cw.tape.value(cw.loss)[0] == 0.0f);
}

TEST_CASE("init_params is deterministic with zero biases and He scale") {
  ModelSpec spec;
  spec.kind = ModelKind::Mlp;
  spec.input_shape = {1000};
  spec.classes = 10;
  spec.hidden = {16};
  ParamSet a = init_params(spec, 42);
  ParamSet b = init_params(spec, 42);
  REQUIRE(a.values.size() == b.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    CHECK(a.values[i].first == b.values[i].first);
    CHECK(a.values[i].second.data == b.values[i].second.data);
    CHECK(a.momentum[i].numel() == a.values[i].second.numel());
    for (float v : a.momentum[i].data) CHECK(v == 0.0f);
  }
  ParamSet c = init_params(spec, 43);
  CHECK(a.at("fc1.w").data != c.at("fc1.w").data);

  for (float v : a.at("fc1.b").data) CHECK(v == 0.0f);
  for (float v : a.at("out.b").data) CHECK(v == 0.0f);

  const Tensor& w = a.at("fc1.w");  // [1000, 16]: 16000 samples, fan-in 1000
  REQUIRE(w.numel() >= 10000);
  auto [mean, stddev] = oracles::mean_std(w.data);
  const double want = std::sqrt(2.0 / 1000.0);
  CHECK(std::abs(stddev - want) <= 0.1 * want);
  CHECK(std::abs(mean) <= 0.1 * want);
}

TEST_CASE("sgd_step arithmetic") {
  ParamSet p;
  p.values.emplace_back("w", Tensor::scalar(1.0f));
  p.momentum.push_back(Tensor::scalar(0.0f));
  CostLedger ledger;

  SUBCASE("plain step") {
    sgd_step(p, {{"w", Tensor::scalar(2.0f)}}, 0.1f, 0.0f, 0.0f, ledger);
    CHECK(p.at("w")[0] == doctest::Approx(0.8).epsilon(1e-7));
    CHECK(ledger.sgd_update_count() == 1);
  }

  SUBCASE("momentum recurrence") {
    p.values[0].second = Tensor::scalar(0.0f);
    sgd_step(p, {{"w", Tensor::scalar(1.0f)}}, 0.1f, 0.9f, 0.0f, ledger);
    CHECK(p.at("w")[0] == doctest::Approx(-0.1).epsilon(1e-7));
    sgd_step(p, {{"w", Tensor::scalar(1.0f)}}, 0.1f, 0.9f, 0.0f, ledger);
    CHECK(p.momentum[0][0] == doctest::Approx(1.9).epsilon(1e-7));
    CHECK(p.at("w")[0] == doctest::Approx(-0.29).epsilon(1e-7));
    CHECK(ledger.sgd_update_count() == 2);
  }

  SUBCASE("zero gradient is a no-op without decay") {
    sgd_step(p, {{"w", Tensor::scalar(0.0f)}}, 0.1f, 0.0f, 0.0f, ledger);
    CHECK(p.at("w")[0] == 1.0f);
  }

  SUBCASE("missing gradient entry") {
    CHECK_THROWS_AS(sgd_step(p, {}, 0.1f, 0.0f, 0.0f, ledger), TensorError);
  }

  SUBCASE("non-finite update") {
    const float inf = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(
        sgd_step(p, {{"w", Tensor::scalar(inf)}}, 0.1f, 0.0f, 0.0f, ledger),
        TensorError);
  }
}

TEST_CASE("sgd on a quadratic contracts by 0.9 per step") {
  ParamSet p;
  p.values.emplace_back("w", Tensor::scalar(1.0f));
  p.momentum.push_back(Tensor::scalar(0.0f));
  CostLedger ledger;
  float expected = 1.0f;
  for (int i = 0; i < 5; ++i) {
    // f(w) = w^2/2, so the gradient is w itself.
    sgd_step(p, {{"w", Tensor::scalar(p.at("w")[0])}}, 0.1f, 0.0f, 0.0f, ledger);
    expected *= 0.9f;
    CHECK(p.at("w")[0] == doctest::Approx(expected).epsilon(1e-6));
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const std::string path = "test_model_ckpt.bin";
  Model model(small_convnet());
  ParamSet params = init_params(model.spec(), 7);
  params.values[0].second.data[0] = -0.0f;  // signed zero must survive
  save_checkpoint(params, path);
  ParamSet loaded = load_checkpoint(path);
  REQUIRE(loaded.values.size() == params.values.size());
  for (std::size_t i = 0; i < params.values.size(); ++i) {
    CHECK(loaded.values[i].first == params.values[i].first);
    CHECK(loaded.values[i].second.shape == params.values[i].second.shape);
    CHECK(std::memcmp(loaded.values[i].second.data.data(),
                      params.values[i].second.data.data(),
                      params.values[i].second.numel() * sizeof(float)) == 0);
    for (float v : loaded.momentum[i].data) CHECK(v == 0.0f);
  }
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint loading rejects bad files") {
  const std::string path = "test_model_ckpt_bad.bin";

  SUBCASE("wrong magic") {
    FILE* f = std::fopen(path.c_str(), "wb");
    std::fwrite("NOPE", 1, 4, f);
    std::fclose(f);
    CHECK_THROWS_AS(load_checkpoint(path), TensorError);
  }

  SUBCASE("truncated payload") {
    Model model(small_mlp());
    ParamSet params = init_params(model.spec(), 7);
    save_checkpoint(params, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
    CHECK_THROWS_AS(load_checkpoint(path), TensorError);
  }

  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint("does_not_exist.bin"), TensorError);
  }

  std::filesystem::remove(path);
}

TEST_CASE("model spec validation") {
  ModelSpec s = small_mlp();
  s.classes = 1;
  CHECK_THROWS_AS(Model{s}, TensorError);

  ModelSpec c = small_convnet();
  c.input_shape = {28, 28};  // missing channel axis
  CHECK_THROWS_AS(Model{c}, TensorError);

  ModelSpec m = small_mlp();
  m.input_shape = {};
  CHECK_THROWS_AS(Model{m}, TensorError);
}

TEST_CASE("input scale is applied inside the model") {
  ModelSpec s = small_mlp();
  s.input_scale = 0.5f;
  Model scaled(s);
  Model plain(small_mlp());
  ParamSet params = init_params(s, 11);
  Rng rng(12);
  Tensor x = random_batch(s, 4, rng);
  Tensor half = x;
  for (auto& v : half.data) v *= 0.5f;
  CostLedger ledger;
  Tensor za = scaled.logits(params, x, ledger);
  Tensor zb = plain.logits(params, half, ledger);
  CHECK(za.data == zb.data);
}
