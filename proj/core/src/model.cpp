// SPDX-License-Identifier: Apache-2.0
#include "corda/model.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "corda/rng.hpp"

namespace corda {

using nlohmann::json;

std::string to_string(Nonlinearity nl) {
  switch (nl) {
    case Nonlinearity::kTanh:
      return "tanh";
    case Nonlinearity::kRelu:
      return "relu";
    case Nonlinearity::kIdentity:
      return "identity";
  }
  return "tanh";
}

Nonlinearity nonlinearity_from_string(const std::string& s) {
  if (s == "tanh") return Nonlinearity::kTanh;
  if (s == "relu") return Nonlinearity::kRelu;
  if (s == "identity") return Nonlinearity::kIdentity;
  throw IoError("unknown nonlinearity: " + s);
}

void validate_model(const ModelState& model) {
  if (model.layers.empty()) throw MethodError("model: no layers");
  for (std::size_t k = 0; k + 1 < model.layers.size(); ++k) {
    if (model.layers[k].d_out() != model.layers[k + 1].d_in()) {
      throw MethodError("model: " + model.layers[k].name + " (d_out " +
                        std::to_string(model.layers[k].d_out()) +
                        ") feeds " + model.layers[k + 1].name + " (d_in " +
                        std::to_string(model.layers[k + 1].d_in()) + ")");
    }
  }
}

Matrix apply_nonlinearity(Nonlinearity nl, Matrix m) {
  switch (nl) {
    case Nonlinearity::kTanh:
      for (std::size_t i = 0; i < m.size(); ++i)
        m.data()[i] = std::tanh(m.data()[i]);
      break;
    case Nonlinearity::kRelu:
      for (std::size_t i = 0; i < m.size(); ++i)
        m.data()[i] = m.data()[i] > 0.0 ? m.data()[i] : 0.0;
      break;
    case Nonlinearity::kIdentity:
      break;
  }
  return m;
}

Matrix nonlinearity_grad(Nonlinearity nl, const Matrix& post) {
  Matrix g(post.rows(), post.cols());
  switch (nl) {
    case Nonlinearity::kTanh:
      for (std::size_t i = 0; i < post.size(); ++i)
        g.data()[i] = 1.0 - post.data()[i] * post.data()[i];
      break;
    case Nonlinearity::kRelu:
      for (std::size_t i = 0; i < post.size(); ++i)
        g.data()[i] = post.data()[i] > 0.0 ? 1.0 : 0.0;
      break;
    case Nonlinearity::kIdentity:
      for (std::size_t i = 0; i < g.size(); ++i) g.data()[i] = 1.0;
      break;
  }
  return g;
}

Matrix forward(const ModelState& model, const Matrix& input) {
  validate_model(model);
  if (input.rows() != model.layers.front().d_in()) {
    throw MethodError("forward: input rows " + std::to_string(input.rows()) +
                      " vs " + model.layers.front().name + " d_in " +
                      std::to_string(model.layers.front().d_in()));
  }
  Matrix x = input;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    x = model.layers[k].weight * x;
    if (k + 1 < model.layers.size()) {
      x = apply_nonlinearity(model.nonlinearity, std::move(x));
    }
  }
  return x;
}

std::pair<Matrix, std::vector<ActivationBatch>> forward_with_capture(
    const ModelState& model, const Matrix& input) {
  validate_model(model);
  if (input.rows() != model.layers.front().d_in()) {
    throw MethodError("forward: input rows " + std::to_string(input.rows()) +
                      " vs " + model.layers.front().name + " d_in " +
                      std::to_string(model.layers.front().d_in()));
  }
  std::vector<ActivationBatch> captures;
  captures.reserve(model.layers.size());
  Matrix x = input;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    captures.push_back({model.layers[k].name, x});
    x = model.layers[k].weight * x;
    if (k + 1 < model.layers.size()) {
      x = apply_nonlinearity(model.nonlinearity, std::move(x));
    }
  }
  return {std::move(x), std::move(captures)};
}

ModelState make_model(
    const std::vector<std::pair<std::size_t, std::size_t>>& layer_dims,
    Nonlinearity nl, std::uint64_t seed) {
  ModelState model;
  model.nonlinearity = nl;
  for (std::size_t k = 0; k < layer_dims.size(); ++k) {
    const auto [d_out, d_in] = layer_dims[k];
    const double bound = 1.0 / std::sqrt(static_cast<double>(d_in));
    LinearLayer layer;
    layer.name = "layer" + std::to_string(k);
    layer.weight =
        random_uniform_matrix(d_out, d_in, -bound, bound, mix_seed(seed, k));
    model.layers.push_back(std::move(layer));
  }
  validate_model(model);
  return model;
}

ModelState make_default_model(std::uint64_t seed) {
  return make_model({{32, 24}, {48, 32}, {16, 48}}, Nonlinearity::kTanh, seed);
}

void save_checkpoint(const ModelState& model,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["nonlinearity"] = to_string(model.nonlinearity);
  manifest["layers"] = json::array();
  for (const auto& layer : model.layers) {
    manifest["layers"].push_back({{"name", layer.name},
                                  {"d_in", layer.d_in()},
                                  {"d_out", layer.d_out()}});
    save_cord1(layer.weight, dir / (layer.name + ".weight"));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

ModelState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("bad model manifest: " + std::string(e.what()));
  }
  ModelState model;
  model.nonlinearity =
      nonlinearity_from_string(manifest.at("nonlinearity").get<std::string>());
  for (const auto& entry : manifest.at("layers")) {
    LinearLayer layer;
    layer.name = entry.at("name").get<std::string>();
    layer.weight = load_cord1(dir / (layer.name + ".weight"));
    if (layer.d_in() != entry.at("d_in").get<std::size_t>() ||
        layer.d_out() != entry.at("d_out").get<std::size_t>()) {
      throw IoError("checkpoint dims disagree with manifest for " +
                    layer.name);
    }
    model.layers.push_back(std::move(layer));
  }
  validate_model(model);
  return model;
}

}  // namespace corda
