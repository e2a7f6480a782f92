// SPDX-License-Identifier: Apache-2.0
#include "corda/adapters.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "corda/rng.hpp"

namespace corda {

using nlohmann::json;

std::string to_string(AdapterKind kind) {
  switch (kind) {
    case AdapterKind::kKpm:
      return "kpm";
    case AdapterKind::kIpm:
      return "ipm";
    case AdapterKind::kLora:
      return "lora";
    case AdapterKind::kPlainSvdTop:
      return "plain_svd_top";
  }
  return "lora";
}

AdapterKind adapter_kind_from_string(const std::string& s) {
  if (s == "kpm") return AdapterKind::kKpm;
  if (s == "ipm") return AdapterKind::kIpm;
  if (s == "lora") return AdapterKind::kLora;
  if (s == "plain_svd_top") return AdapterKind::kPlainSvdTop;
  throw IoError("unknown adapter kind: " + s);
}

namespace {

// b = U[:, lo:lo+r]·√Σ, a = √Σ·vt_cinv[lo:lo+r, :].
AdapterPair from_triples(const Decomposition& d, std::size_t lo,
                         std::size_t r, AdapterKind kind) {
  AdapterPair pair;
  pair.rank = r;
  pair.mode = kind;
  pair.b = Matrix(d.d_out(), r);
  pair.a = Matrix(r, d.d_in());
  for (std::size_t j = 0; j < r; ++j) {
    const double root = std::sqrt(d.sigma[lo + j]);
    for (std::size_t i = 0; i < d.d_out(); ++i) {
      pair.b(i, j) = d.u(i, lo + j) * root;
    }
    for (std::size_t i = 0; i < d.d_in(); ++i) {
      pair.a(j, i) = root * d.vt_cinv(lo + j, i);
    }
  }
  return pair;
}

void require_rank(const Decomposition& d, std::size_t r, const char* what) {
  if (r < 1 || r > d.rank - 1) {
    throw MethodError(std::string(what) + ": layer " + d.layer_name +
                      ", rank " + std::to_string(r) + " outside [1, " +
                      std::to_string(d.rank - 1) + "]");
  }
}

}  // namespace

AdapterPair init_kpm(const Decomposition& d, std::size_t r) {
  require_rank(d, r, "init_kpm");
  return from_triples(d, d.rank - r, r, AdapterKind::kKpm);
}

AdapterPair init_ipm(const Decomposition& d, std::size_t r) {
  require_rank(d, r, "init_ipm");
  return from_triples(d, 0, r, AdapterKind::kIpm);
}

AdapterPair init_lora(std::size_t d_out, std::size_t d_in, std::size_t r,
                      std::uint64_t seed) {
  if (r < 1) throw MethodError("init_lora: rank must be >= 1");
  AdapterPair pair;
  pair.rank = r;
  pair.mode = AdapterKind::kLora;
  pair.b = Matrix(d_out, r);
  const double bound = std::sqrt(3.0 / static_cast<double>(d_in));
  pair.a = random_uniform_matrix(r, d_in, -bound, bound, seed);
  return pair;
}

AdapterPair init_plain_svd_top(const Matrix& w, std::size_t r) {
  const std::size_t rank = std::min(w.rows(), w.cols());
  if (r < 1 || r > rank - 1) {
    throw MethodError("init_plain_svd_top: rank " + std::to_string(r) +
                      " outside [1, " + std::to_string(rank - 1) + "]");
  }
  const SvdResult s = svd(w);
  AdapterPair pair;
  pair.rank = r;
  pair.mode = AdapterKind::kPlainSvdTop;
  pair.b = Matrix(w.rows(), r);
  pair.a = Matrix(r, w.cols());
  for (std::size_t j = 0; j < r; ++j) {
    const double root = std::sqrt(s.sigma[j]);
    for (std::size_t i = 0; i < w.rows(); ++i) {
      pair.b(i, j) = s.u(i, j) * root;
    }
    for (std::size_t i = 0; i < w.cols(); ++i) {
      pair.a(j, i) = root * s.vt(j, i);
    }
  }
  return pair;
}

AdaptedLayer make_residual(const Matrix& w, AdapterPair pair) {
  if (pair.b.rows() != w.rows() || pair.a.cols() != w.cols() ||
      pair.b.cols() != pair.a.rows()) {
    throw MethodError("make_residual: adapter dims do not match weight");
  }
  AdaptedLayer layer;
  layer.residual = w - pair.b * pair.a;
  layer.adapter = std::move(pair);
  return layer;
}

const Matrix& merge(AdaptedLayer& layer) {
  layer.merged = layer.residual + layer.adapter.b * layer.adapter.a;
  return *layer.merged;
}

Matrix forward_adapted(const AdaptedModel& model, const Matrix& input) {
  if (model.layers.empty()) throw MethodError("forward_adapted: no layers");
  if (input.rows() != model.layers.front().d_in()) {
    throw MethodError("forward_adapted: input rows " +
                      std::to_string(input.rows()) + " vs d_in " +
                      std::to_string(model.layers.front().d_in()));
  }
  Matrix x = input;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    const auto& layer = model.layers[k];
    if (layer.adapter.b.rows() != layer.d_out() ||
        layer.adapter.a.cols() != layer.d_in() ||
        layer.adapter.b.cols() != layer.adapter.a.rows()) {
      throw MethodError("forward_adapted: " + layer.name +
                        " adapter dims inconsistent");
    }
    x = layer.residual * x + layer.adapter.b * (layer.adapter.a * x);
    if (k + 1 < model.layers.size()) {
      x = apply_nonlinearity(model.nonlinearity, std::move(x));
    }
  }
  return x;
}

void save_adapters(const AdaptedModel& model,
                   const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["nonlinearity"] = to_string(model.nonlinearity);
  manifest["layers"] = json::array();
  for (const auto& layer : model.layers) {
    manifest["layers"].push_back({{"name", layer.name},
                                  {"mode", to_string(layer.adapter.mode)},
                                  {"r", layer.adapter.rank}});
    save_cord1(layer.adapter.b, dir / (layer.name + ".B"));
    save_cord1(layer.adapter.a, dir / (layer.name + ".A"));
    save_cord1(layer.residual, dir / (layer.name + ".residual"));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

AdaptedModel load_adapters(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("cannot open " + (dir / "manifest.json").string());
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw IoError("bad adapter manifest: " + std::string(e.what()));
  }
  AdaptedModel model;
  model.nonlinearity =
      nonlinearity_from_string(manifest.at("nonlinearity").get<std::string>());
  for (const auto& entry : manifest.at("layers")) {
    AdaptedLayer layer;
    layer.name = entry.at("name").get<std::string>();
    layer.adapter.mode =
        adapter_kind_from_string(entry.at("mode").get<std::string>());
    layer.adapter.rank = entry.at("r").get<std::size_t>();
    layer.adapter.b = load_cord1(dir / (layer.name + ".B"));
    layer.adapter.a = load_cord1(dir / (layer.name + ".A"));
    layer.residual = load_cord1(dir / (layer.name + ".residual"));
    if (layer.adapter.b.cols() != layer.adapter.rank ||
        layer.adapter.a.rows() != layer.adapter.rank) {
      throw IoError("adapter rank disagrees with manifest for " + layer.name);
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

}  // namespace corda
