#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "ldcbm/autodiff/ops.hpp"
#include "ldcbm/autodiff/parameters.hpp"
#include "ldcbm/error.hpp"
#include "test_support.hpp"

using namespace ldcbm;
using namespace ldcbm::ad;
using testsupport::gradient_check;
using testsupport::random_tensor;

namespace {

// Projects an arbitrary-shaped output onto fixed random weights so every
// output entry contributes a distinct amount to the scalar.
Var project(Tape& tape, const Var& v, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return sum(mul(v, tape.constant(random_tensor(v.shape(), rng))));
}

void expect_gradcheck(const std::vector<Tensor>& inputs, const testsupport::ScalarFn& f) {
  const auto r = gradient_check(inputs, f);
  CHECK(r.entries > 0);
  CHECK(r.max_relative_error < 1e-4);
}

}  // namespace

TEST_CASE("square of 3 is 9 with derivative 6") {
  Tape tape;
  const Var x = tape.variable(Tensor::scalar(3.0));
  const Var y = mul(x, x);
  CHECK(y.value().item() == 9.0);
  CHECK(tape.backward(y).of(x).item() == 6.0);
}

TEST_CASE("sigmoid of zero is one half") {
  Tape tape;
  CHECK(sigmoid(tape.constant(Tensor::scalar(0.0))).value().item() == 0.5);
}

TEST_CASE("identity 1x1 convolution returns its input") {
  std::mt19937_64 rng(1);
  Tape tape;
  const Tensor img = random_tensor({2, 5, 4, 1}, rng);
  const Var out = conv2d(tape.constant(img), tape.constant(Tensor({1, 1, 1, 1}, 1.0)),
                         tape.constant(Tensor({1}, 0.0)), {1, 0});
  CHECK(out.value() == img);
}

TEST_CASE("gradient of a constant function is zero") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1.0, 2.0, 3.0}));
  const Var c = tape.constant(Tensor::scalar(4.0));
  const Var y = add(c, scale(sum(x), 0.0));
  const Tensor g = tape.backward(y).of(x);
  for (double v : g.values()) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs and missing records") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(tape.backward(mul(x, x)), Error);
  const Var c = tape.constant(Tensor::scalar(2.0));
  CHECK_THROWS_AS(tape.backward(mul(c, c)), Error);
}

TEST_CASE("shape mismatch names the primitive and both shapes") {
  Tape tape;
  const Var a = tape.constant(Tensor({2, 3}, 1.0));
  const Var b = tape.constant(Tensor({3, 2}, 1.0));
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("add") != std::string::npos);
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("invalid log, division and sqrt fail before producing non-finite values") {
  Tape tape;
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor::vector({1.0, 0.0}))), NumericError);
  CHECK_THROWS_AS(ad::log(tape.constant(Tensor::vector({-1.0}))), NumericError);
  CHECK_THROWS_AS(div(tape.constant(Tensor::vector({1.0})), tape.constant(Tensor::vector({0.0}))),
                  NumericError);
  CHECK_THROWS_AS(ad::sqrt(tape.constant(Tensor::vector({-1e-3}))), NumericError);
}

TEST_CASE("finite differences agree for every primitive") {
  std::mt19937_64 rng(2024);
  SUBCASE("add sub mul div") {
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng, 0.5, 2.0);
    expect_gradcheck({a, b}, [](Tape& t, const std::vector<Var>& v) { return project(t, add(v[0], v[1])); });
    expect_gradcheck({a, b}, [](Tape& t, const std::vector<Var>& v) { return project(t, sub(v[0], v[1])); });
    expect_gradcheck({a, b}, [](Tape& t, const std::vector<Var>& v) { return project(t, mul(v[0], v[1])); });
    expect_gradcheck({a, b}, [](Tape& t, const std::vector<Var>& v) { return project(t, div(v[0], v[1])); });
    const Tensor s = random_tensor({1}, rng, 0.5, 2.0);
    expect_gradcheck({a, s}, [](Tape& t, const std::vector<Var>& v) { return project(t, div(v[0], v[1])); });
    expect_gradcheck({a, s}, [](Tape& t, const std::vector<Var>& v) { return project(t, mul(v[0], v[1])); });
  }
  SUBCASE("unary") {
    const Tensor a = random_tensor({2, 5}, rng);
    const Tensor p = random_tensor({2, 5}, rng, 0.2, 3.0);
    expect_gradcheck({a}, [](Tape& t, const std::vector<Var>& v) { return project(t, scale(v[0], -1.7)); });
    expect_gradcheck({a}, [](Tape& t, const std::vector<Var>& v) { return project(t, add_scalar(v[0], 0.3)); });
    expect_gradcheck({p}, [](Tape& t, const std::vector<Var>& v) { return project(t, ad::sqrt(v[0])); });
    expect_gradcheck({p}, [](Tape& t, const std::vector<Var>& v) { return project(t, ad::log(v[0])); });
    expect_gradcheck({a}, [](Tape& t, const std::vector<Var>& v) { return project(t, sigmoid(v[0])); });
    expect_gradcheck({a}, [](Tape& t, const std::vector<Var>& v) { return project(t, relu(v[0])); });
    expect_gradcheck({a}, [](Tape& t, const std::vector<Var>& v) { return project(t, clamp(v[0], -0.5, 0.5)); });
  }
  SUBCASE("reductions and reshaping") {
    const Tensor x = random_tensor({4, 3}, rng);
    expect_gradcheck({x}, [](Tape&, const std::vector<Var>& v) { return sum(mul(v[0], v[0])); });
    expect_gradcheck({x}, [](Tape&, const std::vector<Var>& v) { return mul(mean(v[0]), mean(v[0])); });
    expect_gradcheck({x}, [](Tape& t, const std::vector<Var>& v) { return project(t, col_mean(v[0])); });
    expect_gradcheck({x}, [](Tape& t, const std::vector<Var>& v) { return project(t, col_variance(v[0])); });
    expect_gradcheck({random_tensor({3}, rng)},
                     [](Tape& t, const std::vector<Var>& v) { return project(t, broadcast_rows(v[0], 4)); });
    expect_gradcheck({x}, [](Tape& t, const std::vector<Var>& v) { return project(t, reshape(v[0], {2, 6})); });
    expect_gradcheck({x}, [](Tape& t, const std::vector<Var>& v) { return project(t, transpose(v[0])); });
    const std::vector<std::size_t> cols{2, 0};
    expect_gradcheck({x}, [&](Tape& t, const std::vector<Var>& v) { return project(t, select_columns(v[0], cols)); });
  }
  SUBCASE("matrix products") {
    const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    expect_gradcheck({a, b}, [](Tape& t, const std::vector<Var>& v) { return project(t, matmul(v[0], v[1])); });
    const Tensor u = random_tensor({3}, rng), w = random_tensor({5}, rng);
    expect_gradcheck({u, w}, [](Tape& t, const std::vector<Var>& v) { return project(t, outer(v[0], v[1])); });
    const Tensor x = random_tensor({5, 4}, rng), wt = random_tensor({3, 4}, rng), bias = random_tensor({3}, rng);
    expect_gradcheck({x, wt, bias},
                     [](Tape& t, const std::vector<Var>& v) { return project(t, linear(v[0], v[1], v[2])); });
  }
  SUBCASE("grouped linear") {
    const Tensor x = random_tensor({4, 6}, rng);
    const Tensor w0 = random_tensor({2}, rng), w1 = random_tensor({3}, rng), w2 = random_tensor({2}, rng);
    const Tensor bias = random_tensor({3}, rng);
    const std::vector<std::vector<std::size_t>> cols{{1, 4}, {0, 2, 5}, {1, 4}};
    expect_gradcheck({x, w0, w1, w2, bias}, [&](Tape& t, const std::vector<Var>& v) {
      const std::vector<Var> ws{v[1], v[2], v[3]};
      return project(t, grouped_linear(v[0], ws, cols, v[4]));
    });
  }
  SUBCASE("convolution with stride and padding") {
    const Tensor x = random_tensor({2, 5, 6, 2}, rng);
    const Tensor w = random_tensor({3, 3, 2, 3}, rng);
    const Tensor b = random_tensor({3}, rng);
    expect_gradcheck({x, w, b}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, conv2d(v[0], v[1], v[2], {2, 1}));
    });
    expect_gradcheck({x, w, b}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, conv2d(v[0], v[1], v[2], {1, 0}));
    });
  }
  SUBCASE("pooling, softmax, pick") {
    expect_gradcheck({random_tensor({2, 3, 3, 4}, rng)},
                     [](Tape& t, const std::vector<Var>& v) { return project(t, global_avg_pool(v[0])); });
    const Tensor logits = random_tensor({3, 4}, rng, -2.0, 2.0);
    expect_gradcheck({logits}, [](Tape& t, const std::vector<Var>& v) { return project(t, softmax(v[0])); });
    expect_gradcheck({logits}, [](Tape& t, const std::vector<Var>& v) { return project(t, log_softmax(v[0])); });
    const std::vector<std::size_t> idx{3, 0, 2};
    expect_gradcheck({logits}, [&](Tape& t, const std::vector<Var>& v) { return project(t, pick(v[0], idx)); });
  }
  SUBCASE("pearson similarity") {
    expect_gradcheck({random_tensor({6, 4}, rng)}, [](Tape& t, const std::vector<Var>& v) {
      return project(t, pearson_similarity(v[0], 1e-8));
    });
  }
}

TEST_CASE("adjoint is linear in the output") {
  std::mt19937_64 rng(5);
  const Tensor x0 = random_tensor({3, 4}, rng, 0.2, 1.5);
  const double a = 0.7, b = -2.3;
  auto f = [](const Var& x) { return sum(mul(sigmoid(x), ad::log(x))); };
  auto g = [](const Var& x) { return mean(mul(x, x)); };

  Tape t1;
  const Var x1 = t1.variable(x0);
  const Tensor combined = t1.backward(add(scale(f(x1), a), scale(g(x1), b))).of(x1);
  Tape t2;
  const Var x2 = t2.variable(x0);
  const Tensor gf = t2.backward(f(x2)).of(x2);
  Tape t3;
  const Var x3 = t3.variable(x0);
  const Tensor gg = t3.backward(g(x3)).of(x3);
  for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(combined[i] - (a * gf[i] + b * gg[i])) <= 1e-10);
}

TEST_CASE("identical inputs give bit-identical values and gradients") {
  auto run = [] {
    std::mt19937_64 rng(77);
    Tape tape;
    const Var x = tape.variable(random_tensor({2, 6, 6, 2}, rng));
    const Var w = tape.variable(random_tensor({3, 3, 2, 4}, rng));
    const Var b = tape.variable(random_tensor({4}, rng));
    const Var pooled = global_avg_pool(relu(conv2d(x, w, b, {2, 1})));
    const Var loss = sum(pearson_similarity(pooled, 1e-8));
    const auto grads = tape.backward(loss);
    return std::make_pair(loss.value(), grads.of(w));
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.first == b.first);
  CHECK(a.second == b.second);
}

TEST_CASE("backward visits every recorded operation once in reverse order") {
  Tape tape;
  const Var x = tape.variable(Tensor::vector({0.5, 1.5}));
  const Var y = sigmoid(mul(x, x));
  const Var z = sum(add(y, x));
  (void)tape.backward(z);
  const auto& replay = tape.last_replay();
  CHECK(replay.size() == tape.recorded_ops());
  CHECK(std::is_sorted(replay.rbegin(), replay.rend()));
  CHECK(std::adjacent_find(replay.begin(), replay.end()) == replay.end());
}

TEST_CASE("checkpoint round trip is bit exact and detects damage") {
  std::mt19937_64 rng(3);
  ParameterStore store;
  store.add("a", random_tensor({2, 3}, rng));
  store.add("b", random_tensor({4}, rng));
  const auto dir = std::filesystem::temp_directory_path() / "ldcbm_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "ckpt.json";
  save_checkpoint(manifest, store, {{"note", "x"}});
  const auto loaded = load_checkpoint(manifest);
  CHECK(loaded.params == store);
  CHECK(loaded.metadata.at("note") == "x");

  std::filesystem::resize_file(dir / "ckpt.bin", 8 * 9);
  CHECK_THROWS_AS(load_checkpoint(manifest), IoError);
  save_checkpoint(manifest, store, {});
  {
    std::fstream f(dir / "ckpt.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3);
    f.put('\x7f');
  }
  CHECK_THROWS_AS(load_checkpoint(manifest), ChecksumError);
  std::filesystem::remove_all(dir);
}
