#include <doctest.h>

#include <random>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/backbone.hpp"
#include "ldcbm/error.hpp"
#include "test_support.hpp"

using namespace ldcbm;
using namespace ldcbm::ad;

namespace {

ParameterStore initialised(const BackboneConfig& config, std::uint64_t seed = 1) {
  ParameterStore params;
  std::mt19937_64 rng(seed);
  init_backbone(config, params, rng);
  return params;
}

}  // namespace

TEST_CASE("two stride-2 stages on 32x32 input give 8x8 maps") {
  BackboneConfig config;
  config.stages = {{16, 3, 2}, {32, 3, 2}};
  config.grouped_layer_index = 1;
  const ParameterStore params = initialised(config);
  std::mt19937_64 rng(2);
  Tape tape;
  const BoundParameters bound(tape, params, false);
  const FeatureMapBatch fm =
      extract_features(config, tape.constant(testsupport::random_tensor({2, 32, 32, 3}, rng, 0.0, 1.0)), bound);
  CHECK(fm.activations.shape() == Shape{2, 8, 8, 32});
  CHECK(fm.layer_index == 1);
  CHECK(config.grouped_dims() == MapDims{8, 8, 32});
}

TEST_CASE("shape contract across configurations") {
  std::mt19937_64 rng(5);
  for (std::size_t h : {7u, 12u, 16u}) {
    for (std::size_t k : {1u, 3u, 5u}) {
      for (std::size_t stride : {1u, 2u}) {
        BackboneConfig config;
        config.input_height = h;
        config.input_width = h + 1;
        config.input_channels = 2;
        config.stages = {{4, k, stride}, {6, k, stride}};
        config.grouped_layer_index = 1;
        const ParameterStore params = initialised(config);
        Tape tape;
        const BoundParameters bound(tape, params, false);
        const auto fm = extract_features(config, tape.constant(testsupport::random_tensor({3, h, h + 1, 2}, rng)), bound);
        const MapDims d = config.grouped_dims();
        CHECK(fm.activations.shape() == Shape{3, d.height, d.width, d.channels});
      }
    }
  }
}

TEST_CASE("zero weights and biases give zero feature maps") {
  BackboneConfig config;
  ParameterStore params = initialised(config);
  for (auto& e : params.entries())
    for (double& v : e.value.values()) v = 0.0;
  std::mt19937_64 rng(3);
  Tape tape;
  const BoundParameters bound(tape, params, false);
  const auto fm = extract_features(config, tape.constant(testsupport::random_tensor({2, 32, 32, 3}, rng)), bound);
  for (double v : fm.activations.value().values()) CHECK(v == 0.0);
}

TEST_CASE("single 1x1 identity stage reproduces the input") {
  BackboneConfig config;
  config.input_height = 5;
  config.input_width = 4;
  config.stages = {{3, 1, 1}};
  config.grouped_layer_index = 0;
  ParameterStore params = initialised(config);
  Tensor& w = params.get(backbone_weight_name(0));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t o = 0; o < 3; ++o) w[i * 3 + o] = i == o ? 1.0 : 0.0;
  std::mt19937_64 rng(4);
  const Tensor images = testsupport::random_tensor({2, 5, 4, 3}, rng, 0.0, 1.0);
  Tape tape;
  const BoundParameters bound(tape, params, false);
  const auto fm = extract_features(config, tape.constant(images), bound);
  CHECK(fm.activations.value().values().size() == images.size());
  for (std::size_t i = 0; i < images.size(); ++i) CHECK(fm.activations.value()[i] == images[i]);
}

TEST_CASE("mismatched image dimensions are rejected with both shapes named") {
  const BackboneConfig config;
  const ParameterStore params = initialised(config);
  Tape tape;
  const BoundParameters bound(tape, params, false);
  try {
    (void)extract_features(config, tape.constant(Tensor({2, 16, 32, 3}, 0.5)), bound);
    FAIL("expected a ShapeError");
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    CHECK(what.find("32 x 32 x 3") != std::string::npos);
    CHECK(what.find("16") != std::string::npos);
  }
}

TEST_CASE("configuration validation") {
  BackboneConfig config;
  CHECK_NOTHROW(config.validate(4));
  CHECK_THROWS_AS(config.validate(33), ConfigError);
  config.grouped_layer_index = 3;
  CHECK_THROWS_AS(config.validate(), ConfigError);
  config.grouped_layer_index = 0;
  config.stages[0].stride = 0;
  CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("initialisation is seeded and bounded") {
  const BackboneConfig config;
  CHECK(initialised(config, 9) == initialised(config, 9));
  CHECK_FALSE(initialised(config, 9) == initialised(config, 10));
  const ParameterStore params = initialised(config);
  const double a = std::sqrt(6.0 / (3.0 * 3.0 * 3.0 + 3.0 * 3.0 * 32.0));
  for (double v : params.get(backbone_weight_name(0)).values()) CHECK(std::abs(v) <= a);
  for (double v : params.get(backbone_bias_name(2)).values()) CHECK(v == 0.0);
}

TEST_CASE("gradients through the feature extractor match finite differences") {
  BackboneConfig config;
  config.input_height = 6;
  config.input_width = 6;
  config.input_channels = 2;
  config.stages = {{3, 3, 2}, {4, 3, 1}};
  config.grouped_layer_index = 1;
  ParameterStore params = initialised(config, 7);
  for (auto& v : params.get(backbone_bias_name(0)).values()) v = 0.05;
  std::mt19937_64 rng(8);
  Tensor images = testsupport::random_tensor({2, 6, 6, 2}, rng, 0.0, 1.0);
  const Tensor probe = testsupport::random_tensor({2, 3, 3, 4}, rng);

  auto value = [&]() {
    Tape tape;
    const BoundParameters bound(tape, params, false);
    const auto fm = extract_features(config, tape.constant(images), bound);
    return sum(mul(fm.activations, tape.constant(probe))).value().item();
  };
  Tape tape;
  const BoundParameters bound(tape, params);
  const Var x = tape.variable(images);
  const auto fm = extract_features(config, x, bound);
  const Gradients grads = tape.backward(sum(mul(fm.activations, tape.constant(probe))));

  const double h = 1e-6;
  double worst = 0.0;
  auto probe_entry = [&](double& slot, double analytic) {
    const double saved = slot;
    slot = saved + h;
    const double up = value();
    slot = saved - h;
    const double down = value();
    slot = saved;
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6}));
  };
  const Tensor gx = grads.of(x);
  for (std::size_t i = 0; i < images.size(); ++i) probe_entry(images[i], gx[i]);
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Tensor g = grads.of(bound.at(p));
    Tensor& t = params.entries()[p].value;
    for (std::size_t i = 0; i < t.size(); ++i) probe_entry(t[i], g[i]);
  }
  CHECK(worst < 1e-4);
}
