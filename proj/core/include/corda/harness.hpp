// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "corda/adapters.hpp"
#include "corda/quant.hpp"

namespace corda {

// Synthetic regression task. Inputs are anisotropic Gaussian columns
// x = shaper·z (z iid standard normal); targets come from the fixed
// seeded map y = target_b·tanh(target_a·x). Everything is a pure
// function of (seed, index), so sampling is deterministic and needs no
// storage.
struct TaskDataset {
  std::string name;
  std::size_t input_dim = 24;
  std::size_t output_dim = 16;
  std::size_t sample_budget = 512;
  std::size_t cols_per_sample = 64;
  std::uint64_t seed = 0;
  Matrix input_shaper;  // input_dim × input_dim
  Matrix target_a;      // hidden × input_dim
  Matrix target_b;      // output_dim × hidden

  // Column col of the budgeted pool (col < sample_budget·cols_per_sample).
  Matrix input_column(std::size_t col) const;
  // Sample index = cols_per_sample consecutive pool columns.
  Matrix sample(std::size_t index) const;
  // Held-out evaluation batch, a stream disjoint from the pool.
  Matrix eval_inputs(std::size_t count) const;
  // Fresh training batch for one step, also disjoint from eval.
  Matrix train_inputs(std::size_t count, std::uint64_t step_seed) const;
  Matrix targets(const Matrix& inputs) const;

  std::size_t total_columns() const { return sample_budget * cols_per_sample; }
};

class TaskSampleSource final : public SampleSource {
 public:
  explicit TaskSampleSource(const TaskDataset& task) : task_(&task) {}
  std::size_t sample_count() const override { return task_->sample_budget; }
  Matrix sample(std::size_t index) const override {
    return task_->sample(index);
  }

 private:
  const TaskDataset* task_;
};

// Two regression tasks over the same input space with distinct target
// functions and distinct anisotropic input covariances.
std::pair<TaskDataset, TaskDataset> make_task_pair(std::uint64_t seed);
std::pair<TaskDataset, TaskDataset> make_task_pair(std::uint64_t seed,
                                                   std::size_t input_dim,
                                                   std::size_t output_dim);

enum class OptimizerKind { kSgd, kAdam };
std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_from_string(const std::string& s);

struct TrainConfig {
  std::size_t steps = 3000;
  std::size_t batch = 32;
  double lr = 1e-3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

double mse(const Matrix& pred, const Matrix& target);

// MSE on the task's held-out evaluation batch.
double task_loss(const ModelState& model, const TaskDataset& task,
                 std::size_t eval_cols = 512);
double task_loss_adapted(const AdaptedModel& model, const TaskDataset& task,
                         std::size_t eval_cols = 512);

struct PretrainResult {
  ModelState model;
  std::vector<double> loss_trace;
};

// Full-parameter training on the knowledge task; throws MethodError on
// divergence (non-finite loss).
PretrainResult pretrain(const ModelState& model, const TaskDataset& knowledge,
                        const TrainConfig& cfg);

struct FinetuneResult {
  std::vector<double> loss_trace;
  double knowledge_before = 0.0;
  double knowledge_after = 0.0;
  double new_task_final = 0.0;
  bool diverged = false;
};

// Gradient descent on the adapter pairs only; residuals are never
// touched. Divergence is recorded, not thrown.
FinetuneResult finetune(AdaptedModel& model, const TaskDataset& new_task,
                        const TrainConfig& cfg,
                        const TaskDataset* knowledge = nullptr);

// Adapter gradients of the MSE loss for one explicit batch; used by the
// finite-difference gradient check.
struct AdapterGradients {
  std::vector<Matrix> db;
  std::vector<Matrix> da;
  double loss = 0.0;
};
AdapterGradients adapter_gradients(const AdaptedModel& model,
                                   const Matrix& inputs,
                                   const Matrix& targets);

// Truncation sweep (compactness study). For each ratio, every method
// truncates round(ratio·R) ranks per layer (the dynamic variants spend
// the same parameter budget via the greedy allocator) and the task loss
// of the truncated stack is recorded.
inline constexpr const char* kSweepPlainSvd = "plain_svd";
inline constexpr const char* kSweepCoSvd = "cosvd";
inline constexpr const char* kSweepCoSvdMismatched = "cosvd_mismatched";
inline constexpr const char* kSweepCoSvdPlus = "cosvd_plus";
inline constexpr const char* kSweepCoSvdPlusPlus = "cosvd_plus_plus";

struct CompactnessPoint {
  double ratio = 0.0;
  std::map<std::string, double> loss_by_method;
};

struct CompactnessCurves {
  double untruncated_loss = 0.0;
  std::vector<CompactnessPoint> points;
};

CompactnessCurves run_compactness_sweep(const ModelState& pretrained,
                                        const TaskDataset& task,
                                        const TaskDataset& mismatched,
                                        const std::vector<double>& ratios,
                                        const SamplingPlan& plan,
                                        const InverseOptions& inv = {});

// Experiment arms. qcorda is the ipm arm with an NF4-quantized frozen
// residual and full-precision adapters.
enum class ArmKind { kLora, kPlainSvdTop, kKpm, kIpm, kQCorda };
std::string to_string(ArmKind arm);
ArmKind arm_from_string(const std::string& s);

struct ModelSpec {
  std::vector<std::pair<std::size_t, std::size_t>> layer_dims = {
      {32, 24}, {48, 32}, {16, 48}};  // (d_out, d_in)
  Nonlinearity nonlinearity = Nonlinearity::kTanh;
  std::uint64_t seed = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelSpec model;
  SamplingPlan sampling;
  InverseOptions inversion;
  std::size_t rank = 4;  // uniform adapter rank for the baselines
  std::optional<std::size_t> budget;  // overrides Σ (d_in+d_out)·rank
  TrainConfig pretrain_cfg{.steps = 2000, .seed = 0};
  // Fine-tuning runs in the small-step regime where initialization
  // differences stay visible over the whole trace.
  TrainConfig finetune_cfg{.steps = 3000, .lr = 5e-5, .seed = 0};
  std::vector<ArmKind> arms = {ArmKind::kLora, ArmKind::kPlainSvdTop,
                               ArmKind::kKpm, ArmKind::kIpm};
  bool quantize_residual = false;  // required by the qcorda arm
  std::size_t block_size = 64;
  // Truncation sweep evaluated on the knowledge task; empty disables.
  std::vector<double> sweep_ratios = {0.25, 0.5};
};

struct ArmReport {
  ArmKind kind = ArmKind::kLora;
  std::map<std::string, std::size_t> rank_per_layer;
  std::vector<double> loss_trace;
  double knowledge_before = 0.0;
  double knowledge_after = 0.0;
  double new_task_final = 0.0;
  bool diverged = false;
  std::string failed_stage;  // empty on success; aborts this arm only
  double wall_seconds = 0.0;
};

struct ExperimentReport {
  std::uint64_t seed = 0;
  std::size_t budget = 0;
  std::vector<double> pretrain_trace;
  double knowledge_base_loss = 0.0;
  double new_task_base_loss = 0.0;
  std::vector<ArmReport> arms;
  CompactnessCurves truncation_curves;           // empty if sweep disabled
  std::vector<ScoreRecord> selection_table;      // first corda arm's
  std::vector<AllocationStep> allocation_trace;  // first corda arm's
  double wall_seconds = 0.0;
};

// Sub-seeds become streams of the master seed, so varying cfg.seed
// alone re-rolls the whole experiment. run_full_experiment applies this
// internally; the CLI uses it to persist bitwise-matching artifacts.
ExperimentConfig derive_seeds(const ExperimentConfig& cfg);

// The decomposition pipeline for one context task: multi-round
// sampling, covariance selection, CO-SVD per layer, rank allocation.
struct CordaPipeline {
  CandidateTable table;
  SelectionResult selection;
  std::vector<Decomposition> decomps;
  std::vector<double> pis;
  RankAllocation allocation;
  std::vector<AllocationStep> allocation_trace;
};

CordaPipeline run_pipeline(const ModelState& pretrained,
                           const SampleSource& source,
                           const SamplingPlan& plan, const InverseOptions& inv,
                           std::size_t budget, AdaptMode mode);

// Adapter construction from a finished pipeline: KPM adapts the
// filtered bottom components (rank r⁽ˡ⁾), IPM the remaining head
// (rank R⁽ˡ⁾−r⁽ˡ⁾).
AdaptedModel adapters_from_pipeline(const ModelState& pretrained,
                                    const CordaPipeline& pipeline,
                                    AdaptMode mode);

// pretrain → N-round sampling → covariance selection → rank allocation
// → adapter init per arm → finetune on the new task. Deterministic per
// seed (wall_seconds aside).
ExperimentReport run_full_experiment(const ExperimentConfig& cfg);

// Builds the per-arm adapted model at step 0 (no training); exposed for
// the step-0 identity checks and the CLI init-adapters path.
AdaptedModel build_arm(ArmKind arm, const ModelState& pretrained,
                       const TaskDataset& knowledge,
                       const TaskDataset& new_task,
                       const ExperimentConfig& cfg,
                       std::map<std::string, std::size_t>* ranks_out = nullptr,
                       std::vector<ScoreRecord>* selection_out = nullptr,
                       std::vector<AllocationStep>* alloc_trace_out = nullptr);

}  // namespace corda
