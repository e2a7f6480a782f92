// SPDX-License-Identifier: Apache-2.0
//
// corda: context-oriented decomposition toolkit.
//
// Exit codes: 0 success, 1 method failure (invariant or numerical),
// 2 I/O or configuration failure.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "corda/artifacts.hpp"
#include "corda/config.hpp"
#include "corda/rng.hpp"

namespace fs = std::filesystem;
using namespace corda;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitMethod = 1;
constexpr int kExitIo = 2;

std::uint64_t seed_override(std::uint64_t fallback) {
  const char* env = std::getenv("CORDA_SEED");
  if (!env || !*env) return fallback;
  try {
    return std::stoull(env);
  } catch (const std::exception&) {
    throw IoError("CORDA_SEED is not an integer: " + std::string(env));
  }
}

std::vector<Matrix> layer_weights(const ModelState& model) {
  std::vector<Matrix> weights;
  for (const auto& layer : model.layers) weights.push_back(layer.weight);
  return weights;
}

// ---------------------------------------------------------------------------
// run

int cmd_run(const std::string& config_path, bool print_config) {
  RunConfig cfg = config_path.empty() ? default_run_config()
                                      : load_run_config(config_path);
  cfg.experiment.seed = seed_override(cfg.experiment.seed);
  if (print_config) {
    std::cout << run_config_to_json(cfg) << "\n";
    return kExitOk;
  }

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  {
    std::ofstream echo(out / "config.json");
    if (!echo) throw IoError("cannot write " + (out / "config.json").string());
    echo << run_config_to_json(cfg) << "\n";
  }

  const ExperimentConfig derived = derive_seeds(cfg.experiment);
  const auto [knowledge, new_task] =
      make_task_pair(cfg.experiment.seed,
                     derived.model.layer_dims.front().second,
                     derived.model.layer_dims.back().first);

  std::cout << "pretraining on task '" << knowledge.name << "'...\n";
  const ModelState base =
      make_model(derived.model.layer_dims, derived.model.nonlinearity,
                 derived.model.seed);
  const PretrainResult pre = pretrain(base, knowledge, derived.pretrain_cfg);
  save_checkpoint(pre.model, out / "model");

  std::size_t budget = 0;
  for (const auto& layer : pre.model.layers) {
    budget += (layer.d_in() + layer.d_out()) * cfg.experiment.rank;
  }
  budget = cfg.experiment.budget.value_or(budget);

  const TaskDataset& context_task =
      cfg.mode == AdaptMode::kKpm ? knowledge : new_task;
  std::cout << "sampling " << derived.sampling.n_rounds
            << " covariance rounds from task '" << context_task.name
            << "'...\n";
  const TaskSampleSource source(context_task);
  const CordaPipeline pipeline =
      run_pipeline(pre.model, source, derived.sampling, derived.inversion,
                   budget, cfg.mode);

  save_candidates(pipeline.table, out / "cov");
  save_selection(pipeline.selection, out / "cov");
  save_decompositions(pipeline.decomps, out / "decomp");
  save_allocation(pipeline.allocation, out / "alloc.json");
  write_allocation_csv(pipeline.allocation_trace, out / "alloc_trace.csv");

  fs::create_directories(out / "cov" / "heatmaps");
  for (const auto& cov : pipeline.selection.selected) {
    const std::size_t grid = std::min<std::size_t>(32, cov.c.rows());
    write_matrix_csv(covariance_heatmap(cov, grid),
                     out / "cov" / "heatmaps" / (cov.layer_name + ".csv"));
  }

  AdaptedModel adapters = adapters_from_pipeline(pre.model, pipeline, cfg.mode);
  save_adapters(adapters, out / "adapters");
  if (cfg.experiment.quantize_residual) {
    for (const auto& layer : adapters.layers) {
      save_quantized(nf4_quantize(layer.residual, cfg.experiment.block_size),
                     out / "quant", layer.name + ".residual");
    }
  }

  std::cout << "running " << cfg.experiment.arms.size()
            << " fine-tuning arms...\n";
  const ExperimentReport report = run_full_experiment(cfg.experiment);
  save_report(report, out / "report");

  for (const auto& arm : report.arms) {
    std::cout << "  " << std::left << std::setw(10) << to_string(arm.kind);
    if (!arm.failed_stage.empty()) {
      std::cout << "FAILED: " << arm.failed_stage << "\n";
      continue;
    }
    std::cout << " new-task " << std::setprecision(6) << arm.new_task_final
              << "  forgetting "
              << (arm.knowledge_after - arm.knowledge_before)
              << (arm.diverged ? "  [diverged]" : "") << "\n";
  }
  std::cout << "artifacts written to " << out.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// select-cov

int cmd_select_cov(const std::string& model_dir, const std::string& cov_dir,
                   const std::string& out_dir, const InverseOptions& inv) {
  const ModelState model = load_checkpoint(model_dir);
  const CandidateTable table = load_candidates(cov_dir);
  const SelectionResult sel =
      select_covariances(layer_weights(model), table, inv);
  save_selection(sel, out_dir);
  std::cout << "selected rounds:";
  for (std::size_t l = 0; l < sel.selected.size(); ++l) {
    std::cout << " " << sel.selected[l].layer_name << "="
              << sel.chosen_round[l];
  }
  std::cout << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// decompose

int cmd_decompose(const std::string& model_dir, const std::string& cov_dir,
                  const std::string& out_dir, const InverseOptions& inv,
                  std::optional<std::size_t> round) {
  const ModelState model = load_checkpoint(model_dir);
  const CandidateTable table = load_candidates(cov_dir);
  if (table.size() != model.layers.size()) {
    throw IoError("covariance table has " + std::to_string(table.size()) +
                  " layers, model has " +
                  std::to_string(model.layers.size()));
  }

  std::vector<std::size_t> rounds(model.layers.size(), 0);
  if (round) {
    rounds.assign(model.layers.size(), *round);
  } else if (fs::exists(fs::path(cov_dir) / "selection.json")) {
    rounds = load_selection(cov_dir);
  }

  std::vector<Decomposition> decomps;
  std::vector<ScoreRecord> scores;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (rounds[l] >= table[l].size()) {
      throw IoError("round " + std::to_string(rounds[l]) +
                    " out of range for " + model.layers[l].name);
    }
    const CovarianceStats& cov = table[l][rounds[l]];
    decomps.push_back(co_svd(model.layers[l].weight, cov, inv));
    scores.push_back({cov.layer_name, cov.round_index,
                      pi_metric(cov, model.layers[l].d_out(), inv),
                      covariance_score(model.layers[l].weight, cov, inv),
                      {}});
  }
  save_decompositions(decomps, out_dir);
  write_selection_csv(scores, fs::path(out_dir) / "scores.csv");
  std::cout << "decomposed " << decomps.size() << " layers into " << out_dir
            << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// allocate

int cmd_allocate(const std::string& decomp_dir, const std::string& mode_str,
                 std::size_t budget, const std::string& out_dir,
                 const InverseOptions& inv) {
  const auto decomps = load_decompositions(decomp_dir);
  const AdaptMode mode = adapt_mode_from_string(mode_str);
  std::vector<double> pis;
  for (const auto& d : decomps) {
    CovarianceStats cov;
    cov.layer_name = d.layer_name;
    cov.c = d.reg.c_reg;  // already regularized: re-inversion adds no boost
    pis.push_back(pi_metric(cov, d.d_out(), inv));
  }
  std::vector<AllocationStep> trace;
  const RankAllocation alloc =
      allocate_ranks(decomps, pis, budget, mode, &trace);
  fs::create_directories(out_dir);
  save_allocation(alloc, fs::path(out_dir) / "alloc.json");
  write_allocation_csv(trace, fs::path(out_dir) / "alloc_trace.csv");
  std::cout << "mode " << to_string(alloc.mode) << " budget " << alloc.budget
            << " realized " << alloc.realized << "\n";
  for (const auto& [layer, r] : alloc.r_per_layer) {
    std::cout << "  " << layer << " r=" << r << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// init-adapters

int cmd_init_adapters(const std::string& model_dir,
                      const std::string& decomp_dir,
                      const std::string& alloc_path,
                      const std::string& scheme, std::size_t rank,
                      const std::string& out_dir, std::uint64_t seed) {
  const ModelState model = load_checkpoint(model_dir);
  AdaptedModel adapted;
  adapted.nonlinearity = model.nonlinearity;

  if (!alloc_path.empty()) {
    const auto decomps = load_decompositions(decomp_dir);
    const RankAllocation alloc = load_allocation(alloc_path);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const Decomposition& d = decomps.at(l);
      const std::size_t pos = alloc.r_per_layer.at(d.layer_name);
      AdapterPair pair = alloc.mode == AdaptMode::kKpm
                             ? init_kpm(d, pos)
                             : init_ipm(d, d.rank - pos);
      AdaptedLayer layer =
          make_residual(model.layers[l].weight, std::move(pair));
      layer.name = model.layers[l].name;
      adapted.layers.push_back(std::move(layer));
    }
  } else {
    const AdapterKind kind = adapter_kind_from_string(scheme);
    std::vector<Decomposition> decomps;
    if (kind == AdapterKind::kKpm || kind == AdapterKind::kIpm) {
      decomps = load_decompositions(decomp_dir);
    }
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
      const Matrix& w = model.layers[l].weight;
      AdapterPair pair;
      switch (kind) {
        case AdapterKind::kKpm:
          pair = init_kpm(decomps.at(l), rank);
          break;
        case AdapterKind::kIpm:
          pair = init_ipm(decomps.at(l), rank);
          break;
        case AdapterKind::kLora:
          pair = init_lora(w.rows(), w.cols(), rank, mix_seed(seed, l));
          break;
        case AdapterKind::kPlainSvdTop:
          pair = init_plain_svd_top(w, rank);
          break;
      }
      AdaptedLayer layer = make_residual(w, std::move(pair));
      layer.name = model.layers[l].name;
      adapted.layers.push_back(std::move(layer));
    }
  }
  save_adapters(adapted, out_dir);
  std::cout << "initialized adapters for " << adapted.layers.size()
            << " layers into " << out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// quantize

int cmd_quantize(const std::string& adapters_dir, const std::string& format,
                 std::size_t block_size, const std::string& out_dir) {
  if (format != "nf4") {
    throw IoError("unsupported quantization format: " + format);
  }
  const AdaptedModel adapters = load_adapters(adapters_dir);
  for (const auto& layer : adapters.layers) {
    save_quantized(nf4_quantize(layer.residual, block_size), out_dir,
                   layer.name + ".residual");
  }
  std::cout << "quantized " << adapters.layers.size() << " residuals into "
            << out_dir << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// verify

struct VerifyContext {
  bool all_ok = true;
  void row(const std::string& check, bool ok, const std::string& detail = "") {
    std::cout << (ok ? "[PASS] " : "[FAIL] ") << check;
    if (!detail.empty()) std::cout << " (" << detail << ")";
    std::cout << "\n";
    if (!ok) all_ok = false;
  }
};

int cmd_verify(const std::string& dir_str) {
  const fs::path dir = dir_str;
  if (!fs::exists(dir)) throw IoError("no such directory: " + dir.string());
  VerifyContext v;

  std::optional<ModelState> model;
  if (fs::exists(dir / "model" / "manifest.json")) {
    try {
      model = load_checkpoint(dir / "model");
      v.row("model checkpoint loads", true);
    } catch (const std::exception& e) {
      v.row("model checkpoint loads", false, e.what());
    }
  }

  if (fs::exists(dir / "cov" / "manifest.json")) {
    try {
      const CandidateTable table = load_candidates(dir / "cov");
      bool sym = true;
      for (const auto& row : table) {
        for (const auto& cov : row) {
          const double scale = std::max(cov.c.max_abs(), 1e-300);
          for (std::size_t i = 0; i < cov.c.rows() && sym; ++i) {
            for (std::size_t j = i + 1; j < cov.c.cols(); ++j) {
              if (std::abs(cov.c(i, j) - cov.c(j, i)) > 1e-9 * scale) {
                sym = false;
                break;
              }
            }
          }
        }
      }
      v.row("covariances symmetric", sym);
    } catch (const std::exception& e) {
      v.row("covariances load", false, e.what());
    }
  }

  std::vector<Decomposition> decomps;
  if (fs::exists(dir / "decomp" / "manifest.json")) {
    try {
      decomps = load_decompositions(dir / "decomp");
      bool descending = true;
      for (const auto& d : decomps) {
        for (std::size_t i = 0; i + 1 < d.sigma.size(); ++i) {
          if (d.sigma[i] < d.sigma[i + 1]) descending = false;
        }
        if (!d.sigma.empty() && d.sigma.back() < 0.0) descending = false;
      }
      v.row("singular values descending and nonnegative", descending);

      if (model) {
        double worst = 0.0;
        for (std::size_t l = 0; l < decomps.size(); ++l) {
          const Matrix& w = model->layers[l].weight;
          worst = std::max(worst,
                           (reconstruct(decomps[l]) - w).frobenius_norm() /
                               w.frobenius_norm());
        }
        v.row("reconstruction identity <= 1e-6", worst <= 1e-6,
              "max rel err " + std::to_string(worst));
      }
    } catch (const std::exception& e) {
      v.row("decompositions load", false, e.what());
    }
  }

  if (fs::exists(dir / "alloc.json") && !decomps.empty()) {
    try {
      const RankAllocation alloc = load_allocation(dir / "alloc.json");
      std::size_t cost = 0;
      bool in_range = true;
      for (const auto& d : decomps) {
        const std::size_t r = alloc.r_per_layer.at(d.layer_name);
        if (r < 1 || r > d.rank - 1) in_range = false;
        cost += (d.d_in() + d.d_out()) *
                (alloc.mode == AdaptMode::kKpm ? r : d.rank - r);
      }
      v.row("allocation ranks within [1, R-1]", in_range);
      v.row("realized cost matches", cost == alloc.realized,
            std::to_string(cost) + " vs " + std::to_string(alloc.realized));
      if (alloc.mode == AdaptMode::kKpm) {
        v.row("kpm budget satisfied", alloc.realized <= alloc.budget);
      } else {
        v.row("ipm budget satisfied", alloc.realized < alloc.budget);
      }
    } catch (const std::exception& e) {
      v.row("allocation loads", false, e.what());
    }
  }

  if (fs::exists(dir / "adapters" / "manifest.json")) {
    try {
      const AdaptedModel adapters = load_adapters(dir / "adapters");
      if (model) {
        double worst = 0.0;
        for (std::size_t l = 0; l < adapters.layers.size(); ++l) {
          const auto& layer = adapters.layers[l];
          const Matrix& w = model->layers[l].weight;
          const Matrix sum =
              layer.residual + layer.adapter.b * layer.adapter.a;
          worst = std::max(worst,
                           (sum - w).frobenius_norm() / w.frobenius_norm());
        }
        v.row("step-0 identity residual+BA=W <= 1e-9", worst <= 1e-9,
              "max rel err " + std::to_string(worst));
      }
    } catch (const std::exception& e) {
      v.row("adapters load", false, e.what());
    }
  }

  if (fs::exists(dir / "quant")) {
    try {
      const AdaptedModel adapters = load_adapters(dir / "adapters");
      bool ok = true;
      for (const auto& layer : adapters.layers) {
        const QuantizedTensor q =
            load_quantized(dir / "quant", layer.name + ".residual");
        const Matrix back = nf4_dequantize(q);
        if (back.rows() != layer.residual.rows() ||
            back.cols() != layer.residual.cols()) {
          ok = false;
        }
      }
      v.row("quantized residuals dequantize cleanly", ok);
    } catch (const std::exception& e) {
      v.row("quantized residuals load", false, e.what());
    }
  }

  if (fs::exists(dir / "report" / "report.json")) {
    try {
      const ExperimentReport report = load_report(dir / "report");
      bool traces_ok = true;
      for (const auto& arm : report.arms) {
        if (arm.failed_stage.empty() && !arm.diverged &&
            arm.loss_trace.empty()) {
          traces_ok = false;
        }
      }
      v.row("report traces present", traces_ok);
    } catch (const std::exception& e) {
      v.row("report loads", false, e.what());
    }
  }

  std::cout << (v.all_ok ? "VERIFY OK\n" : "VERIFY FAILED\n");
  return v.all_ok ? kExitOk : kExitMethod;
}

// ---------------------------------------------------------------------------
// report

int cmd_report(const std::string& dir) {
  const ExperimentReport report = load_report(fs::path(dir) / "report");
  std::cout << "seed " << report.seed << "  budget " << report.budget << "\n";
  std::cout << "knowledge base loss " << report.knowledge_base_loss
            << "  new-task base loss " << report.new_task_base_loss << "\n";
  std::cout << std::left << std::setw(12) << "arm" << std::setw(14)
            << "new-task" << std::setw(14) << "forgetting" << std::setw(10)
            << "status"
            << "\n";
  for (const auto& arm : report.arms) {
    std::cout << std::left << std::setw(12) << to_string(arm.kind);
    if (!arm.failed_stage.empty()) {
      std::cout << std::setw(14) << "-" << std::setw(14) << "-"
                << "failed: " << arm.failed_stage << "\n";
      continue;
    }
    std::cout << std::setw(14) << arm.new_task_final << std::setw(14)
              << (arm.knowledge_after - arm.knowledge_before) << std::setw(10)
              << (arm.diverged ? "diverged" : "ok") << "\n";
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context-oriented decomposition for task-aware adapters"};
  app.require_subcommand(0, 1);

  // run
  auto* run = app.add_subcommand("run", "run the full experiment pipeline");
  std::string run_config;
  bool print_config = false;
  run->add_option("--config", run_config, "experiment config JSON");
  run->add_flag("--print-config", print_config,
                "print the fully-resolved config and exit");

  // select-cov
  auto* select = app.add_subcommand(
      "select-cov", "pick the most representative covariance per layer");
  std::string sc_model, sc_cov, sc_out;
  InverseOptions sc_inv;
  select->add_option("--model", sc_model, "model checkpoint dir")->required();
  select->add_option("--cov", sc_cov, "covariance candidates dir")->required();
  select->add_option("--out", sc_out, "output dir")->required();
  select->add_option("--threshold-scale", sc_inv.threshold_scale,
                     "inversion residual threshold per sqrt(d)");
  select->add_option("--c0", sc_inv.c0, "initial diagonal boost coefficient");

  // decompose
  auto* decompose =
      app.add_subcommand("decompose", "context-oriented SVD per layer");
  std::string dc_model, dc_cov, dc_out;
  InverseOptions dc_inv;
  std::size_t dc_round = 0;
  bool dc_round_set = false;
  decompose->add_option("--model", dc_model, "model checkpoint dir")
      ->required();
  decompose->add_option("--cov", dc_cov, "covariance candidates dir")
      ->required();
  decompose->add_option("--out", dc_out, "output dir")->required();
  decompose->add_option("--threshold-scale", dc_inv.threshold_scale,
                        "inversion residual threshold per sqrt(d)");
  decompose->add_option("--c0", dc_inv.c0,
                        "initial diagonal boost coefficient");
  decompose
      ->add_option("--round", dc_round,
                   "covariance round to use (default: selection.json if "
                   "present, else 0)")
      ->each([&](const std::string&) { dc_round_set = true; });

  // allocate
  auto* allocate =
      app.add_subcommand("allocate", "greedy dynamic rank allocation");
  std::string al_decomp, al_mode = "kpm", al_out;
  std::size_t al_budget = 0;
  InverseOptions al_inv;
  allocate->add_option("--decomp", al_decomp, "decomposition dir")->required();
  allocate->add_option("--mode", al_mode, "kpm or ipm");
  allocate->add_option("--budget", al_budget, "adapter parameter budget")
      ->required();
  allocate->add_option("--out", al_out, "output dir")->required();
  allocate->add_option("--threshold-scale", al_inv.threshold_scale,
                       "inversion residual threshold per sqrt(d)");

  // init-adapters
  auto* init =
      app.add_subcommand("init-adapters", "build adapter pairs and residuals");
  std::string ia_model, ia_decomp, ia_alloc, ia_scheme = "kpm", ia_out;
  std::size_t ia_rank = 4;
  std::uint64_t ia_seed = 0;
  init->add_option("--model", ia_model, "model checkpoint dir")->required();
  init->add_option("--decomp", ia_decomp, "decomposition dir");
  init->add_option("--alloc", ia_alloc, "alloc.json from `corda allocate`");
  init->add_option("--scheme", ia_scheme,
                   "kpm|ipm|lora|plain_svd_top (uniform rank path)");
  init->add_option("--rank", ia_rank, "uniform adapter rank");
  init->add_option("--seed", ia_seed, "seed for lora initialization");
  init->add_option("--out", ia_out, "output dir")->required();

  // quantize
  auto* quantize =
      app.add_subcommand("quantize", "NF4-quantize frozen residuals");
  std::string qz_adapters, qz_format = "nf4", qz_out;
  std::size_t qz_block = 64;
  quantize->add_option("--adapters", qz_adapters, "adapters dir")->required();
  quantize->add_option("--quantize-residual", qz_format,
                       "quantization format (nf4)");
  quantize->add_option("--block-size", qz_block, "quantization block size");
  quantize->add_option("--out", qz_out, "output dir")->required();

  // verify
  auto* verify = app.add_subcommand(
      "verify", "re-check artifact invariants, print pass/fail table");
  std::string vf_dir;
  verify->add_option("--dir", vf_dir, "workspace dir from `corda run`")
      ->required();

  // report
  auto* report_cmd =
      app.add_subcommand("report", "summarize an experiment report");
  std::string rp_dir;
  report_cmd->add_option("--dir", rp_dir, "workspace dir from `corda run`")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitIo;
  }

  try {
    if (run->parsed()) return cmd_run(run_config, print_config);
    if (select->parsed()) {
      return cmd_select_cov(sc_model, sc_cov, sc_out, sc_inv);
    }
    if (decompose->parsed()) {
      return cmd_decompose(dc_model, dc_cov, dc_out, dc_inv,
                           dc_round_set ? std::optional<std::size_t>(dc_round)
                                        : std::nullopt);
    }
    if (allocate->parsed()) {
      return cmd_allocate(al_decomp, al_mode, al_budget, al_out, al_inv);
    }
    if (init->parsed()) {
      return cmd_init_adapters(ia_model, ia_decomp, ia_alloc, ia_scheme,
                               ia_rank, ia_out, ia_seed);
    }
    if (quantize->parsed()) {
      return cmd_quantize(qz_adapters, qz_format, qz_block, qz_out);
    }
    if (verify->parsed()) return cmd_verify(vf_dir);
    if (report_cmd->parsed()) return cmd_report(rp_dir);
    std::cout << app.help();
    return kExitOk;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const MethodError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMethod;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitMethod;
  }
}
