// SPDX-License-Identifier: Apache-2.0
#include "corda/harness.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>

#include "corda/rng.hpp"

namespace corda {

namespace {

constexpr std::uint64_t kPoolStream = 1ull << 40;
constexpr std::uint64_t kEvalStream = 2ull << 40;
constexpr std::uint64_t kTrainStream = 3ull << 40;

Matrix columns_from_rng(const Matrix& shaper, Rng& rng, std::size_t count) {
  const std::size_t d = shaper.rows();
  Matrix z(d, count);
  for (std::size_t j = 0; j < count; ++j) {
    for (std::size_t i = 0; i < d; ++i) z(i, j) = rng.normal();
  }
  return shaper * z;
}

// Deterministic random rotation: QR of a seeded Gaussian matrix with
// the sign convention diag(R) > 0.
Matrix random_rotation(std::size_t d, std::uint64_t seed) {
  const Matrix g = random_normal_matrix(d, d, seed);
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                 Eigen::RowMajor>>
      gm(g.data(), static_cast<Eigen::Index>(d),
         static_cast<Eigen::Index>(d));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gm);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  Matrix out(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out(i, j) = q(static_cast<Eigen::Index>(i),
                    static_cast<Eigen::Index>(j));
    }
  }
  return out;
}

}  // namespace

Matrix TaskDataset::input_column(std::size_t col) const {
  Rng rng(mix_seed(seed, kPoolStream + col));
  return columns_from_rng(input_shaper, rng, 1);
}

Matrix TaskDataset::sample(std::size_t index) const {
  if (index >= sample_budget) {
    throw MethodError("dataset " + name + ": sample " +
                      std::to_string(index) + " beyond budget " +
                      std::to_string(sample_budget));
  }
  Matrix out(input_dim, cols_per_sample);
  for (std::size_t j = 0; j < cols_per_sample; ++j) {
    const Matrix col = input_column(index * cols_per_sample + j);
    for (std::size_t i = 0; i < input_dim; ++i) out(i, j) = col(i, 0);
  }
  return out;
}

Matrix TaskDataset::eval_inputs(std::size_t count) const {
  Rng rng(mix_seed(seed, kEvalStream));
  return columns_from_rng(input_shaper, rng, count);
}

Matrix TaskDataset::train_inputs(std::size_t count,
                                 std::uint64_t step_seed) const {
  Rng rng(mix_seed(mix_seed(seed, kTrainStream), step_seed));
  return columns_from_rng(input_shaper, rng, count);
}

Matrix TaskDataset::targets(const Matrix& inputs) const {
  return target_b * apply_nonlinearity(Nonlinearity::kTanh,
                                       target_a * inputs);
}

namespace {

TaskDataset make_task(const std::string& name, std::uint64_t seed,
                      std::size_t input_dim, std::size_t output_dim,
                      double decay) {
  TaskDataset task;
  task.name = name;
  task.seed = seed;
  task.input_dim = input_dim;
  task.output_dim = output_dim;

  // Anisotropic input covariance: rotate a decaying axis-aligned
  // spectrum so tasks with different seeds stress different directions.
  const Matrix rotation = random_rotation(input_dim, mix_seed(seed, 11));
  Matrix shaper(input_dim, input_dim);
  for (std::size_t i = 0; i < input_dim; ++i) {
    const double scale = std::pow(decay, static_cast<double>(i));
    for (std::size_t j = 0; j < input_dim; ++j) {
      shaper(j, i) = rotation(j, i) * scale;
    }
  }
  task.input_shaper = std::move(shaper);

  const std::size_t hidden = 32;
  const double bound_a = 2.0 / std::sqrt(static_cast<double>(input_dim));
  const double bound_b = 1.0 / std::sqrt(static_cast<double>(hidden));
  task.target_a = random_uniform_matrix(hidden, input_dim, -bound_a, bound_a,
                                        mix_seed(seed, 12));
  task.target_b = random_uniform_matrix(output_dim, hidden, -bound_b,
                                        bound_b, mix_seed(seed, 13));
  return task;
}

}  // namespace

std::pair<TaskDataset, TaskDataset> make_task_pair(std::uint64_t seed,
                                                   std::size_t input_dim,
                                                   std::size_t output_dim) {
  TaskDataset knowledge = make_task("knowledge", mix_seed(seed, 1), input_dim,
                                    output_dim, 0.72);
  TaskDataset new_task =
      make_task("new", mix_seed(seed, 2), input_dim, output_dim, 0.80);
  return {std::move(knowledge), std::move(new_task)};
}

std::pair<TaskDataset, TaskDataset> make_task_pair(std::uint64_t seed) {
  return make_task_pair(seed, 24, 16);
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "adam";
}

OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw IoError("unknown optimizer: " + s);
}

double mse(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw MethodError("mse: shape mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    sum += d * d;
  }
  return sum / static_cast<double>(pred.size());
}

double task_loss(const ModelState& model, const TaskDataset& task,
                 std::size_t eval_cols) {
  const Matrix inputs = task.eval_inputs(eval_cols);
  return mse(forward(model, inputs), task.targets(inputs));
}

double task_loss_adapted(const AdaptedModel& model, const TaskDataset& task,
                         std::size_t eval_cols) {
  const Matrix inputs = task.eval_inputs(eval_cols);
  return mse(forward_adapted(model, inputs), task.targets(inputs));
}

namespace {

struct AdamSlot {
  Matrix m;
  Matrix v;
};

void optimizer_step(Matrix& w, const Matrix& grad, AdamSlot& slot,
                    std::size_t t, const TrainConfig& cfg) {
  if (cfg.optimizer == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      w.data()[i] -= cfg.lr * grad.data()[i];
    }
    return;
  }
  if (slot.m.empty()) {
    slot.m = Matrix(w.rows(), w.cols());
    slot.v = Matrix(w.rows(), w.cols());
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double g = grad.data()[i];
    double& m = slot.m.data()[i];
    double& v = slot.v.data()[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
    const double m_hat = m / bc1;
    const double v_hat = v / bc2;
    w.data()[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
  }
}

struct FullGradients {
  std::vector<Matrix> dw;
  double loss = 0.0;
};

FullGradients model_gradients(const ModelState& model, const Matrix& inputs,
                              const Matrix& targets) {
  const std::size_t n = model.layers.size();
  std::vector<Matrix> layer_in(n);
  std::vector<Matrix> post(n);  // post-nonlinearity output of layer k (k<n-1)
  Matrix x = inputs;
  for (std::size_t k = 0; k < n; ++k) {
    layer_in[k] = x;
    x = model.layers[k].weight * x;
    if (k + 1 < n) {
      x = apply_nonlinearity(model.nonlinearity, std::move(x));
      post[k] = x;
    }
  }

  FullGradients out;
  out.loss = mse(x, targets);
  out.dw.resize(n);

  const double scale = 2.0 / static_cast<double>(x.size());
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.data()[i] = scale * (x.data()[i] - targets.data()[i]);
  }

  for (std::size_t k = n; k-- > 0;) {
    out.dw[k] = g * layer_in[k].transposed();
    if (k == 0) break;
    Matrix gx = model.layers[k].weight.transposed() * g;
    const Matrix deriv = nonlinearity_grad(model.nonlinearity, post[k - 1]);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx.data()[i] *= deriv.data()[i];
    }
    g = std::move(gx);
  }
  return out;
}

}  // namespace

PretrainResult pretrain(const ModelState& model, const TaskDataset& knowledge,
                        const TrainConfig& cfg) {
  PretrainResult result;
  result.model = model;
  validate_model(result.model);
  std::vector<AdamSlot> slots(model.layers.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Matrix inputs = knowledge.train_inputs(cfg.batch, step);
    const Matrix targets = knowledge.targets(inputs);
    FullGradients grads = model_gradients(result.model, inputs, targets);
    if (!std::isfinite(grads.loss)) {
      throw MethodError("pretrain: diverged at step " + std::to_string(step));
    }
    result.loss_trace.push_back(grads.loss);
    for (std::size_t k = 0; k < result.model.layers.size(); ++k) {
      optimizer_step(result.model.layers[k].weight, grads.dw[k], slots[k],
                     step + 1, cfg);
    }
  }
  return result;
}

AdapterGradients adapter_gradients(const AdaptedModel& model,
                                   const Matrix& inputs,
                                   const Matrix& targets) {
  const std::size_t n = model.layers.size();
  std::vector<Matrix> layer_in(n);
  std::vector<Matrix> ax(n);
  std::vector<Matrix> post(n);
  Matrix x = inputs;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& layer = model.layers[k];
    layer_in[k] = x;
    ax[k] = layer.adapter.a * x;
    x = layer.residual * x + layer.adapter.b * ax[k];
    if (k + 1 < n) {
      x = apply_nonlinearity(model.nonlinearity, std::move(x));
      post[k] = x;
    }
  }

  AdapterGradients out;
  out.loss = mse(x, targets);
  out.db.resize(n);
  out.da.resize(n);

  const double scale = 2.0 / static_cast<double>(x.size());
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.data()[i] = scale * (x.data()[i] - targets.data()[i]);
  }

  for (std::size_t k = n; k-- > 0;) {
    const auto& layer = model.layers[k];
    const Matrix bt_g = layer.adapter.b.transposed() * g;
    out.db[k] = g * ax[k].transposed();
    out.da[k] = bt_g * layer_in[k].transposed();
    if (k == 0) break;
    Matrix gx = layer.residual.transposed() * g +
                layer.adapter.a.transposed() * bt_g;
    const Matrix deriv = nonlinearity_grad(model.nonlinearity, post[k - 1]);
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx.data()[i] *= deriv.data()[i];
    }
    g = std::move(gx);
  }
  return out;
}

FinetuneResult finetune(AdaptedModel& model, const TaskDataset& new_task,
                        const TrainConfig& cfg, const TaskDataset* knowledge) {
  FinetuneResult result;
  if (knowledge) {
    result.knowledge_before = task_loss_adapted(model, *knowledge);
  }
  std::vector<AdamSlot> slots_b(model.layers.size());
  std::vector<AdamSlot> slots_a(model.layers.size());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Matrix inputs = new_task.train_inputs(cfg.batch, step);
    const Matrix targets = new_task.targets(inputs);
    AdapterGradients grads = adapter_gradients(model, inputs, targets);
    result.loss_trace.push_back(grads.loss);
    if (!std::isfinite(grads.loss)) {
      result.diverged = true;
      break;
    }
    for (std::size_t k = 0; k < model.layers.size(); ++k) {
      optimizer_step(model.layers[k].adapter.b, grads.db[k], slots_b[k],
                     step + 1, cfg);
      optimizer_step(model.layers[k].adapter.a, grads.da[k], slots_a[k],
                     step + 1, cfg);
    }
  }
  if (knowledge) {
    result.knowledge_after = task_loss_adapted(model, *knowledge);
  }
  result.new_task_final = task_loss_adapted(model, new_task);
  return result;
}

namespace {

Matrix truncate_plain_svd(const SvdResult& s, const Matrix& w,
                          std::size_t r) {
  const std::size_t rank = std::min(w.rows(), w.cols());
  const std::size_t keep = rank - r;
  Matrix out(w.rows(), w.cols());
  for (std::size_t i = 0; i < keep; ++i) {
    const double sv = s.sigma[i];
    for (std::size_t row = 0; row < w.rows(); ++row) {
      const double scaled = sv * s.u(row, i);
      if (scaled == 0.0) continue;
      for (std::size_t col = 0; col < w.cols(); ++col) {
        out(row, col) += scaled * s.vt(i, col);
      }
    }
  }
  return out;
}

ModelState with_weights(const ModelState& base, std::vector<Matrix> weights) {
  ModelState out = base;
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    out.layers[l].weight = std::move(weights[l]);
  }
  return out;
}

std::vector<std::size_t> fixed_positions(
    const std::vector<Decomposition>& decomps, double ratio) {
  std::vector<std::size_t> r(decomps.size());
  for (std::size_t l = 0; l < decomps.size(); ++l) {
    const auto full = static_cast<double>(decomps[l].rank);
    const auto pos = static_cast<std::size_t>(std::llround(ratio * full));
    r[l] = std::min(pos, decomps[l].rank - 1);
  }
  return r;
}

}  // namespace

CompactnessCurves run_compactness_sweep(const ModelState& pretrained,
                                        const TaskDataset& task,
                                        const TaskDataset& mismatched,
                                        const std::vector<double>& ratios,
                                        const SamplingPlan& plan,
                                        const InverseOptions& inv) {
  validate_model(pretrained);
  const std::size_t n = pretrained.layers.size();

  std::vector<Matrix> weights(n);
  for (std::size_t l = 0; l < n; ++l) {
    weights[l] = pretrained.layers[l].weight;
  }

  const TaskSampleSource matched_source(task);
  const TaskSampleSource mismatched_source(mismatched);
  const CandidateTable matched_table =
      sample_rounds(plan, matched_source, pretrained);
  SamplingPlan single = plan;
  single.n_rounds = 1;
  const CandidateTable mismatched_table =
      sample_rounds(single, mismatched_source, pretrained);

  std::vector<Decomposition> matched(n), mismatched_d(n), selected(n);
  std::vector<SvdResult> plain(n);
  std::vector<double> pis_matched(n), pis_selected(n);
  const SelectionResult sel = select_covariances(weights, matched_table, inv);
  for (std::size_t l = 0; l < n; ++l) {
    matched[l] = co_svd(weights[l], matched_table[l][0], inv);
    mismatched_d[l] = co_svd(weights[l], mismatched_table[l][0], inv);
    selected[l] = co_svd(weights[l], sel.selected[l], inv);
    plain[l] = svd(weights[l]);
    pis_matched[l] =
        pi_metric(matched_table[l][0], weights[l].rows(), inv);
    pis_selected[l] = pi_metric(sel.selected[l], weights[l].rows(), inv);
  }

  CompactnessCurves curves;
  curves.untruncated_loss = task_loss(pretrained, task);

  for (double ratio : ratios) {
    CompactnessPoint point;
    point.ratio = ratio;
    const std::vector<std::size_t> r_fixed = fixed_positions(matched, ratio);
    const bool any = std::any_of(r_fixed.begin(), r_fixed.end(),
                                 [](std::size_t r) { return r > 0; });
    if (!any) {
      const double base = curves.untruncated_loss;
      for (const char* method :
           {kSweepPlainSvd, kSweepCoSvd, kSweepCoSvdMismatched,
            kSweepCoSvdPlus, kSweepCoSvdPlusPlus}) {
        point.loss_by_method[method] = base;
      }
      curves.points.push_back(std::move(point));
      continue;
    }

    auto eval_fixed = [&](auto&& truncate_layer) {
      std::vector<Matrix> truncated(n);
      for (std::size_t l = 0; l < n; ++l) {
        truncated[l] = truncate_layer(l, r_fixed[l]);
      }
      return task_loss(with_weights(pretrained, std::move(truncated)), task);
    };

    point.loss_by_method[kSweepPlainSvd] =
        eval_fixed([&](std::size_t l, std::size_t r) {
          return r == 0 ? weights[l] : truncate_plain_svd(plain[l], weights[l], r);
        });
    point.loss_by_method[kSweepCoSvd] =
        eval_fixed([&](std::size_t l, std::size_t r) {
          return r == 0 ? reconstruct(matched[l]) : truncate_bottom(matched[l], r);
        });
    point.loss_by_method[kSweepCoSvdMismatched] =
        eval_fixed([&](std::size_t l, std::size_t r) {
          return r == 0 ? reconstruct(mismatched_d[l])
                        : truncate_bottom(mismatched_d[l], r);
        });

    std::size_t budget = 0;
    for (std::size_t l = 0; l < n; ++l) {
      budget += (matched[l].d_in() + matched[l].d_out()) * r_fixed[l];
    }
    auto eval_dynamic = [&](const std::vector<Decomposition>& decomps,
                            const std::vector<double>& pis) {
      const RankAllocation alloc =
          allocate_ranks(decomps, pis, budget, AdaptMode::kKpm);
      std::vector<Matrix> truncated(n);
      for (std::size_t l = 0; l < n; ++l) {
        truncated[l] = truncate_bottom(
            decomps[l], alloc.r_per_layer.at(decomps[l].layer_name));
      }
      return task_loss(with_weights(pretrained, std::move(truncated)), task);
    };
    point.loss_by_method[kSweepCoSvdPlus] = eval_dynamic(matched, pis_matched);
    point.loss_by_method[kSweepCoSvdPlusPlus] =
        eval_dynamic(selected, pis_selected);

    curves.points.push_back(std::move(point));
  }
  return curves;
}

std::string to_string(ArmKind arm) {
  switch (arm) {
    case ArmKind::kLora:
      return "lora";
    case ArmKind::kPlainSvdTop:
      return "plain_svd";
    case ArmKind::kKpm:
      return "kpm";
    case ArmKind::kIpm:
      return "ipm";
    case ArmKind::kQCorda:
      return "qcorda";
  }
  return "lora";
}

ArmKind arm_from_string(const std::string& s) {
  if (s == "lora") return ArmKind::kLora;
  if (s == "plain_svd") return ArmKind::kPlainSvdTop;
  if (s == "kpm") return ArmKind::kKpm;
  if (s == "ipm") return ArmKind::kIpm;
  if (s == "qcorda") return ArmKind::kQCorda;
  throw IoError("unknown experiment arm: " + s);
}

ExperimentConfig derive_seeds(const ExperimentConfig& cfg) {
  ExperimentConfig derived = cfg;
  derived.model.seed = mix_seed(cfg.seed, 0xA100 + cfg.model.seed);
  derived.sampling.seed = mix_seed(cfg.seed, 0xB200 + cfg.sampling.seed);
  derived.pretrain_cfg.seed =
      mix_seed(cfg.seed, 0xC300 + cfg.pretrain_cfg.seed);
  derived.finetune_cfg.seed =
      mix_seed(cfg.seed, 0xD400 + cfg.finetune_cfg.seed);
  return derived;
}

CordaPipeline run_pipeline(const ModelState& pretrained,
                           const SampleSource& source,
                           const SamplingPlan& plan, const InverseOptions& inv,
                           std::size_t budget, AdaptMode mode) {
  validate_model(pretrained);
  const std::size_t n = pretrained.layers.size();
  std::vector<Matrix> weights(n);
  for (std::size_t l = 0; l < n; ++l) {
    weights[l] = pretrained.layers[l].weight;
  }

  CordaPipeline p;
  p.table = sample_rounds(plan, source, pretrained);
  p.selection = select_covariances(weights, p.table, inv);
  p.decomps.resize(n);
  p.pis.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    p.decomps[l] = co_svd(weights[l], p.selection.selected[l], inv);
    p.pis[l] = pi_metric(p.selection.selected[l], weights[l].rows(), inv);
  }
  // attach the full rank-score curve to each winning candidate's row
  for (std::size_t l = 0; l < n; ++l) {
    for (auto& rec : p.selection.table) {
      if (rec.layer_name != p.decomps[l].layer_name ||
          rec.round_index != p.selection.chosen_round[l]) {
        continue;
      }
      for (std::size_t r = 1; r < p.decomps[l].rank; ++r) {
        rec.rank_scores.push_back(
            rank_alloc_score(p.decomps[l].sigma, r, p.pis[l]));
      }
    }
  }
  p.allocation =
      allocate_ranks(p.decomps, p.pis, budget, mode, &p.allocation_trace);
  return p;
}

AdaptedModel adapters_from_pipeline(const ModelState& pretrained,
                                    const CordaPipeline& pipeline,
                                    AdaptMode mode) {
  AdaptedModel model;
  model.nonlinearity = pretrained.nonlinearity;
  for (std::size_t l = 0; l < pretrained.layers.size(); ++l) {
    const Decomposition& d = pipeline.decomps[l];
    const std::size_t pos = pipeline.allocation.r_per_layer.at(d.layer_name);
    AdapterPair pair = mode == AdaptMode::kKpm
                           ? init_kpm(d, pos)
                           : init_ipm(d, d.rank - pos);
    AdaptedLayer layer =
        make_residual(pretrained.layers[l].weight, std::move(pair));
    layer.name = pretrained.layers[l].name;
    model.layers.push_back(std::move(layer));
  }
  return model;
}

AdaptedModel build_arm(ArmKind arm, const ModelState& pretrained,
                       const TaskDataset& knowledge,
                       const TaskDataset& new_task,
                       const ExperimentConfig& cfg,
                       std::map<std::string, std::size_t>* ranks_out,
                       std::vector<ScoreRecord>* selection_out,
                       std::vector<AllocationStep>* alloc_trace_out) {
  validate_model(pretrained);
  const std::size_t n = pretrained.layers.size();
  std::size_t default_budget = 0;
  for (std::size_t l = 0; l < n; ++l) {
    default_budget +=
        (pretrained.layers[l].d_in() + pretrained.layers[l].d_out()) *
        cfg.rank;
  }
  const std::size_t budget = cfg.budget.value_or(default_budget);

  AdaptedModel model;
  model.nonlinearity = pretrained.nonlinearity;

  switch (arm) {
    case ArmKind::kLora: {
      for (std::size_t l = 0; l < n; ++l) {
        const Matrix& w = pretrained.layers[l].weight;
        AdaptedLayer layer = make_residual(
            w, init_lora(w.rows(), w.cols(), cfg.rank,
                         mix_seed(cfg.seed, 0x10a0 + l)));
        layer.name = pretrained.layers[l].name;
        model.layers.push_back(std::move(layer));
      }
      break;
    }
    case ArmKind::kPlainSvdTop: {
      for (std::size_t l = 0; l < n; ++l) {
        const Matrix& w = pretrained.layers[l].weight;
        AdaptedLayer layer =
            make_residual(w, init_plain_svd_top(w, cfg.rank));
        layer.name = pretrained.layers[l].name;
        model.layers.push_back(std::move(layer));
      }
      break;
    }
    case ArmKind::kKpm:
    case ArmKind::kIpm:
    case ArmKind::kQCorda: {
      const bool kpm = arm == ArmKind::kKpm;
      if (arm == ArmKind::kQCorda && !cfg.quantize_residual) {
        throw MethodError("build_arm: qcorda requires quantize_residual");
      }
      const TaskDataset& context_task = kpm ? knowledge : new_task;
      const TaskSampleSource source(context_task);
      const AdaptMode mode = kpm ? AdaptMode::kKpm : AdaptMode::kIpm;
      const CordaPipeline pipeline = run_pipeline(
          pretrained, source, cfg.sampling, cfg.inversion, budget, mode);
      if (selection_out) *selection_out = pipeline.selection.table;
      if (alloc_trace_out) *alloc_trace_out = pipeline.allocation_trace;
      model = adapters_from_pipeline(pretrained, pipeline, mode);
      if (arm == ArmKind::kQCorda) {
        for (auto& layer : model.layers) {
          layer.residual =
              nf4_dequantize(nf4_quantize(layer.residual, cfg.block_size));
        }
      }
      break;
    }
  }

  if (ranks_out) {
    ranks_out->clear();
    for (const auto& layer : model.layers) {
      (*ranks_out)[layer.name] = layer.adapter.rank;
    }
  }
  return model;
}

ExperimentReport run_full_experiment(const ExperimentConfig& cfg) {
  const auto t_start = std::chrono::steady_clock::now();

  ExperimentReport report;
  report.seed = cfg.seed;

  const ExperimentConfig derived = derive_seeds(cfg);

  const auto [knowledge, new_task] = make_task_pair(
      cfg.seed, derived.model.layer_dims.front().second,
      derived.model.layer_dims.back().first);

  const ModelState base = make_model(derived.model.layer_dims,
                                     derived.model.nonlinearity,
                                     derived.model.seed);
  PretrainResult pre = pretrain(base, knowledge, derived.pretrain_cfg);
  report.pretrain_trace = std::move(pre.loss_trace);
  report.knowledge_base_loss = task_loss(pre.model, knowledge);
  report.new_task_base_loss = task_loss(pre.model, new_task);

  std::size_t default_budget = 0;
  for (const auto& layer : pre.model.layers) {
    default_budget += (layer.d_in() + layer.d_out()) * cfg.rank;
  }
  report.budget = cfg.budget.value_or(default_budget);

  if (!cfg.sweep_ratios.empty()) {
    report.truncation_curves =
        run_compactness_sweep(pre.model, knowledge, new_task,
                              cfg.sweep_ratios, derived.sampling,
                              derived.inversion);
  }

  for (ArmKind arm : cfg.arms) {
    ArmReport arm_report;
    arm_report.kind = arm;
    const auto t_arm = std::chrono::steady_clock::now();
    try {
      std::vector<ScoreRecord> selection;
      std::vector<AllocationStep> alloc_trace;
      AdaptedModel adapted =
          build_arm(arm, pre.model, knowledge, new_task, derived,
                    &arm_report.rank_per_layer, &selection, &alloc_trace);
      if (!selection.empty() && report.selection_table.empty()) {
        report.selection_table = std::move(selection);
      }
      if (!alloc_trace.empty() && report.allocation_trace.empty()) {
        report.allocation_trace = std::move(alloc_trace);
      }
      FinetuneResult ft =
          finetune(adapted, new_task, derived.finetune_cfg, &knowledge);
      arm_report.loss_trace = std::move(ft.loss_trace);
      arm_report.knowledge_before = ft.knowledge_before;
      arm_report.knowledge_after = ft.knowledge_after;
      arm_report.new_task_final = ft.new_task_final;
      arm_report.diverged = ft.diverged;
    } catch (const MethodError& e) {
      arm_report.failed_stage = e.what();
    }
    arm_report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                      t_arm)
            .count();
    report.arms.push_back(std::move(arm_report));
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                    t_start)
          .count();
  return report;
}

}  // namespace corda
