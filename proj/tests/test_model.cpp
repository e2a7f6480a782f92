// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "corda/model.hpp"
#include "corda/rng.hpp"

using namespace corda;

namespace {

ModelState identity_model(std::size_t n_layers, std::size_t d,
                          Nonlinearity nl) {
  ModelState m;
  m.nonlinearity = nl;
  for (std::size_t k = 0; k < n_layers; ++k) {
    m.layers.push_back({"layer" + std::to_string(k), Matrix::identity(d)});
  }
  return m;
}

}  // namespace

TEST_CASE("single identity layer passes input through") {
  const ModelState m = identity_model(1, 4, Nonlinearity::kIdentity);
  const Matrix v = random_normal_matrix(4, 1, 5);
  CHECK(forward(m, v) == v);
}

TEST_CASE("scalar chain multiplies") {
  ModelState m;
  m.nonlinearity = Nonlinearity::kIdentity;
  m.layers.push_back({"layer0", Matrix(1, 1, {2.0})});
  m.layers.push_back({"layer1", Matrix(1, 1, {3.0})});
  const Matrix out = forward(m, Matrix(1, 1, {1.0}));
  CHECK(out(0, 0) == doctest::Approx(6.0).epsilon(1e-15));
}

TEST_CASE("seeded tanh model is bitwise deterministic") {
  const ModelState m = make_default_model(17);
  const Matrix input = random_normal_matrix(24, 8, 23);
  CHECK(forward(m, input) == forward(m, input));
}

TEST_CASE("forward rejects mismatched input") {
  const ModelState m = make_default_model(1);
  CHECK_THROWS_AS(forward(m, Matrix(7, 2)), MethodError);
}

TEST_CASE("model validation names incompatible layers") {
  ModelState m;
  m.layers.push_back({"a", Matrix(3, 2)});
  m.layers.push_back({"b", Matrix(3, 4)});
  CHECK_THROWS_WITH_AS(validate_model(m),
                       doctest::Contains("a"), MethodError);
}

TEST_CASE("capture of a 1-layer model returns its input") {
  const ModelState m = identity_model(1, 3, Nonlinearity::kIdentity);
  const Matrix x = random_normal_matrix(3, 5, 2);
  const auto [out, captures] = forward_with_capture(m, x);
  REQUIRE(captures.size() == 1);
  CHECK(captures[0].x == x);
  CHECK(captures[0].layer_name == "layer0");
}

TEST_CASE("identity-weight 2-layer model captures the input twice") {
  const ModelState m = identity_model(2, 3, Nonlinearity::kIdentity);
  const Matrix x = random_normal_matrix(3, 4, 9);
  const auto [out, captures] = forward_with_capture(m, x);
  REQUIRE(captures.size() == 2);
  CHECK(captures[0].x == x);
  CHECK(captures[1].x == x);
}

TEST_CASE("tanh model capture equals manual recomputation exactly") {
  const ModelState m = make_default_model(31);
  const Matrix x = random_normal_matrix(24, 6, 37);
  const auto [out, captures] = forward_with_capture(m, x);
  REQUIRE(captures.size() == 3);

  Matrix expect = m.layers[0].weight * x;
  for (std::size_t i = 0; i < expect.size(); ++i) {
    expect.data()[i] = std::tanh(expect.data()[i]);
  }
  CHECK(captures[1].x == expect);  // 0 ulp: same operations
}

TEST_CASE("capture output bit-equals forward output") {
  const ModelState m = make_default_model(3);
  const Matrix x = random_normal_matrix(24, 16, 4);
  const auto [out, captures] = forward_with_capture(m, x);
  CHECK(out == forward(m, x));
  for (std::size_t k = 0; k < captures.size(); ++k) {
    CHECK(captures[k].x.rows() == m.layers[k].d_in());
    CHECK(captures[k].x.cols() == x.cols());
  }
}

TEST_CASE("default model has the documented shapes") {
  const ModelState m = make_default_model(0);
  REQUIRE(m.layers.size() == 3);
  CHECK(m.layers[0].d_out() == 32);
  CHECK(m.layers[0].d_in() == 24);
  CHECK(m.layers[1].d_out() == 48);
  CHECK(m.layers[2].d_out() == 16);
  CHECK(m.nonlinearity == Nonlinearity::kTanh);
  const double bound = 1.0 / std::sqrt(24.0);
  CHECK(m.layers[0].weight.max_abs() <= bound);
}

TEST_CASE("checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "corda_model_ckpt";
  std::filesystem::remove_all(dir);
  const ModelState m = make_default_model(11);
  save_checkpoint(m, dir);
  const ModelState loaded = load_checkpoint(dir);
  REQUIRE(loaded.layers.size() == m.layers.size());
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    CHECK(loaded.layers[k].weight == m.layers[k].weight);
    CHECK(loaded.layers[k].name == m.layers[k].name);
  }
  CHECK(loaded.nonlinearity == m.nonlinearity);
  std::filesystem::remove_all(dir);
}

TEST_CASE("relu and identity nonlinearities") {
  Matrix m(1, 3, {-2.0, 0.0, 5.0});
  const Matrix relu = apply_nonlinearity(Nonlinearity::kRelu, m);
  CHECK(relu(0, 0) == 0.0);
  CHECK(relu(0, 2) == 5.0);
  CHECK(apply_nonlinearity(Nonlinearity::kIdentity, m) == m);
}
