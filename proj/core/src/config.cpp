// SPDX-License-Identifier: Apache-2.0
#include "corda/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace corda {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::string& scope,
                    const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw IoError("config: " + scope + " must be an object");
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.contains(key)) {
      throw IoError("config: unknown key \"" + key + "\" in " + scope);
    }
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw IoError(std::string("config: bad value for \"") + key + "\"");
  }
}

void parse_train(const json& j, const std::string& scope, TrainConfig& cfg) {
  reject_unknown(j, scope,
                 {"steps", "batch", "lr", "optimizer", "beta1", "beta2",
                  "epsilon", "seed"});
  read_field(j, "steps", cfg.steps);
  read_field(j, "batch", cfg.batch);
  read_field(j, "lr", cfg.lr);
  if (j.contains("optimizer")) {
    cfg.optimizer = optimizer_from_string(j.at("optimizer").get<std::string>());
  }
  read_field(j, "beta1", cfg.beta1);
  read_field(j, "beta2", cfg.beta2);
  read_field(j, "epsilon", cfg.epsilon);
  read_field(j, "seed", cfg.seed);
  if (cfg.steps < 1) throw IoError("config: " + scope + ".steps must be >= 1");
  if (cfg.batch < 1) throw IoError("config: " + scope + ".batch must be >= 1");
}

json train_to_json(const TrainConfig& cfg) {
  return {{"steps", cfg.steps},     {"batch", cfg.batch},
          {"lr", cfg.lr},           {"optimizer", to_string(cfg.optimizer)},
          {"beta1", cfg.beta1},     {"beta2", cfg.beta2},
          {"epsilon", cfg.epsilon}, {"seed", cfg.seed}};
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw IoError(std::string("config: parse error: ") + e.what());
  }
  reject_unknown(j, "config",
                 {"seed", "mode", "rank", "budget", "model", "sampling",
                  "inversion", "pretrain", "train", "arms",
                  "quantize_residual", "block_size", "sweep_ratios",
                  "output_dir"});

  RunConfig cfg;
  auto& exp = cfg.experiment;
  read_field(j, "seed", exp.seed);
  if (j.contains("mode")) {
    cfg.mode = adapt_mode_from_string(j.at("mode").get<std::string>());
  }
  read_field(j, "rank", exp.rank);
  if (exp.rank < 1) throw IoError("config: rank must be >= 1");
  if (j.contains("budget")) {
    std::size_t budget = 0;
    read_field(j, "budget", budget);
    exp.budget = budget;
  }

  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, "model", {"seed", "nonlinearity", "layer_dims"});
    read_field(m, "seed", exp.model.seed);
    if (m.contains("nonlinearity")) {
      exp.model.nonlinearity =
          nonlinearity_from_string(m.at("nonlinearity").get<std::string>());
    }
    if (m.contains("layer_dims")) {
      exp.model.layer_dims.clear();
      for (const auto& pair : m.at("layer_dims")) {
        if (!pair.is_array() || pair.size() != 2) {
          throw IoError("config: layer_dims entries must be [d_out, d_in]");
        }
        exp.model.layer_dims.emplace_back(pair.at(0).get<std::size_t>(),
                                          pair.at(1).get<std::size_t>());
      }
      if (exp.model.layer_dims.empty()) {
        throw IoError("config: layer_dims must not be empty");
      }
    }
  }

  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    reject_unknown(s, "sampling", {"n_rounds", "samples_per_round", "seed"});
    read_field(s, "n_rounds", exp.sampling.n_rounds);
    read_field(s, "samples_per_round", exp.sampling.samples_per_round);
    read_field(s, "seed", exp.sampling.seed);
    if (exp.sampling.n_rounds < 1) {
      throw IoError("config: sampling.n_rounds must be >= 1");
    }
  }

  if (j.contains("inversion")) {
    const json& inv = j.at("inversion");
    reject_unknown(inv, "inversion", {"threshold_scale", "c0"});
    read_field(inv, "threshold_scale", exp.inversion.threshold_scale);
    read_field(inv, "c0", exp.inversion.c0);
    if (exp.inversion.threshold_scale <= 0.0 || exp.inversion.c0 <= 0.0) {
      throw IoError("config: inversion knobs must be positive");
    }
  }

  if (j.contains("pretrain")) {
    parse_train(j.at("pretrain"), "pretrain", exp.pretrain_cfg);
  }
  if (j.contains("train")) {
    parse_train(j.at("train"), "train", exp.finetune_cfg);
  }

  if (j.contains("arms")) {
    exp.arms.clear();
    for (const auto& arm : j.at("arms")) {
      exp.arms.push_back(arm_from_string(arm.get<std::string>()));
    }
    if (exp.arms.empty()) throw IoError("config: arms must not be empty");
  }

  if (j.contains("quantize_residual")) {
    const auto q = j.at("quantize_residual").get<std::string>();
    if (q == "nf4") {
      exp.quantize_residual = true;
    } else if (q == "none") {
      exp.quantize_residual = false;
    } else {
      throw IoError("config: quantize_residual must be \"none\" or \"nf4\"");
    }
  }
  read_field(j, "block_size", exp.block_size);
  if (exp.block_size < 1) throw IoError("config: block_size must be >= 1");
  if (j.contains("sweep_ratios")) {
    exp.sweep_ratios.clear();
    for (const auto& ratio : j.at("sweep_ratios")) {
      const double value = ratio.get<double>();
      if (value < 0.0 || value >= 1.0) {
        throw IoError("config: sweep_ratios entries must be in [0, 1)");
      }
      exp.sweep_ratios.push_back(value);
    }
  }
  read_field(j, "output_dir", cfg.output_dir);

  for (ArmKind arm : exp.arms) {
    if (arm == ArmKind::kQCorda && !exp.quantize_residual) {
      throw IoError(
          "config: arm \"qcorda\" requires quantize_residual = \"nf4\"");
    }
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_run_config(text);
}

std::string run_config_to_json(const RunConfig& cfg) {
  const auto& exp = cfg.experiment;
  json j;
  j["seed"] = exp.seed;
  j["mode"] = to_string(cfg.mode);
  j["rank"] = exp.rank;
  if (exp.budget) j["budget"] = *exp.budget;
  j["model"] = {{"seed", exp.model.seed},
                {"nonlinearity", to_string(exp.model.nonlinearity)},
                {"layer_dims", exp.model.layer_dims}};
  j["sampling"] = {{"n_rounds", exp.sampling.n_rounds},
                   {"samples_per_round", exp.sampling.samples_per_round},
                   {"seed", exp.sampling.seed}};
  j["inversion"] = {{"threshold_scale", exp.inversion.threshold_scale},
                    {"c0", exp.inversion.c0}};
  j["pretrain"] = train_to_json(exp.pretrain_cfg);
  j["train"] = train_to_json(exp.finetune_cfg);
  j["arms"] = json::array();
  for (ArmKind arm : exp.arms) j["arms"].push_back(to_string(arm));
  j["quantize_residual"] = exp.quantize_residual ? "nf4" : "none";
  j["block_size"] = exp.block_size;
  j["sweep_ratios"] = exp.sweep_ratios;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2);
}

}  // namespace corda
