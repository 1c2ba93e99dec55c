#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "onpro/apf.hpp"
#include "onpro/losses.hpp"
#include "onpro/memory.hpp"
#include "onpro/model.hpp"
#include "onpro/numerics.hpp"
#include "onpro/prototypes.hpp"
#include "onpro/stream.hpp"

namespace onpro {

enum class Method { OnPro, ER };

const char* method_name(Method m);
Method parse_method(const std::string& name);

enum class Optimizer { Adam, Sgd };

const char* optimizer_name(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

struct MethodConfig {
  Method method = Method::OnPro;
  // Component switches (OnPro only).
  bool use_ope_new = true;
  bool use_ope_seen = true;
  bool use_apf = true;
  bool use_ins = true;
  /// Replay prototypes leave out the classes of the current task.
  bool seen_excludes_new = false;

  std::size_t batch_size = 10;
  std::size_t replay_batch_size = 64;
  std::size_t memory_size = 100;
  double tau = 0.5;
  double tau_prime = 0.07;
  double alpha = 0.25;
  double mixup_concentration = 1.0;

  Optimizer optimizer = Optimizer::Adam;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  std::vector<std::size_t> hidden{64, 64};
  AugmentConfig augment;

  void validate() const;
};

/// The paper's settings for a method: OnPro trains with Adam (lr 5e-4,
/// weight decay 1e-4), the ER baseline with SGD (lr 0.1, no weight decay).
MethodConfig paper_defaults(Method method);

struct DiagnosticsConfig {
  bool loss_series = true;
  bool similarity_probe = true;
  /// Evaluate on the test sets of all tasks seen so far every this many
  /// steps; 0 disables the per-step curve.
  std::size_t eval_every = 0;
};

/// Lower-triangular a(i, j): accuracy on task j after training through task i.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  /// Builds from rows, validating shape and range (MetricError on violation).
  static AccuracyMatrix from_rows(std::vector<std::vector<double>> rows);

  /// Row i must hold exactly i + 1 entries in [0, 1].
  void add_row(std::vector<double> row);

  std::size_t num_tasks() const noexcept { return rows_.size(); }
  double at(std::size_t i, std::size_t j) const { return rows_.at(i).at(j); }
  const std::vector<std::vector<double>>& rows() const noexcept { return rows_; }

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::vector<std::vector<double>> rows_;
};

/// Mean of the final row. MetricError when the matrix is empty.
double average_accuracy(const AccuracyMatrix& matrix);
/// (1/(T−1)) Σ_{j<T} [max_{k<T} a(k, j) − a(T, j)]. MetricError when T < 2.
double average_forgetting(const AccuracyMatrix& matrix);

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
double accuracy_from_logits(const Tensor2& logits, std::span<const ClassId> labels);
/// Test-time accuracy of the classifier head, no augmentation. EvalError if empty.
double evaluate(const ModelParams& params, std::span<const Sample> test_set);

struct ClassSimilarity {
  ClassId cls = 0;
  double similarity = 0.0;
};

/// Cosine between each online prototype and the normalized mean embedding of
/// every bank sample of that class. Classes missing from the bank are omitted.
std::vector<ClassSimilarity> prototype_similarity_probe(const ModelParams& params,
                                                        const MemoryBank& bank,
                                                        const OnlinePrototypeSet& online);

/// Everything one OnPro objective evaluation consumes. Rows of the four
/// matrices are stacked in this order for a single forward pass.
struct StepInputs {
  Tensor2 incoming_original;
  Tensor2 incoming_augmented;
  std::vector<ClassId> incoming_labels;
  Tensor2 replay_original;
  Tensor2 replay_augmented;
  /// Dominant label of each replay entry (prototype and contrastive grouping).
  std::vector<ClassId> replay_labels;
  /// Soft targets for cross-entropy, one row per replay entry.
  Tensor2 replay_targets;
  std::size_t feedback_count = 0;
};

struct ObjectiveOptions {
  bool use_ope_new = true;
  bool use_ope_seen = true;
  bool use_ins = true;
  double tau = 0.5;
  double tau_prime = 0.07;
  /// Classes dropped from the replay prototypes (empty for the default loss).
  std::vector<ClassId> seen_excluded;
};

struct ObjectiveResult {
  LossBreakdown breakdown;
  /// Prototypes of the un-augmented replay views, before the update.
  OnlinePrototypeSet replay_prototypes;
};

/// Full OnPro loss. When `grads` is non-null the parameter gradients are
/// accumulated into it.
ObjectiveResult onpro_objective(const ModelParams& params, const StepInputs& inputs,
                                const ObjectiveOptions& options, ModelParams* grads);

/// Mean cross-entropy of the classifier on `x` with hard labels.
LossBreakdown er_objective(const ModelParams& params, const Tensor2& x,
                           std::span<const ClassId> labels, ModelParams* grads);

struct TrainerState {
  TrainerState(const MethodConfig& config, const ModelSpec& spec, std::uint64_t seed);

  MethodConfig config;
  ModelParams params;
  AdamState optimizer;
  MemoryBank bank;
  Rng rng;
  /// Replay prototypes of the previous step; drives the next pair feedback.
  std::optional<OnlinePrototypeSet> cached_replay_prototypes;
  std::vector<ClassId> current_classes;
  int current_task = 0;
  std::size_t step = 0;
};

struct StepRecord {
  std::size_t step = 0;
  int task = 0;
  LossBreakdown losses;
  std::size_t replay_size = 0;
  std::size_t feedback_count = 0;
};

/// Replay retrieval and augmentation for one incoming batch (consumes the
/// state's generator, leaves everything else untouched).
StepInputs prepare_step_inputs(TrainerState& state, std::span<const Sample> batch);

/// One iteration: replay retrieval, augmentation, loss, one optimizer update,
/// then the reservoir update with the incoming batch.
StepRecord train_step(TrainerState& state, std::span<const Sample> batch);

struct SimilarityRecord {
  std::size_t step = 0;
  int task = 0;
  ClassId cls = 0;
  double similarity = 0.0;
  bool first_step_of_task = false;
  /// The bank's samples of this class are exactly the batch's samples of it.
  bool bank_matches_batch = false;
};

struct EvalRecord {
  std::size_t step = 0;
  int task = 0;
  double accuracy = 0.0;  // mean over the test sets of tasks seen so far
};

struct RunResult {
  ModelParams model;
  AccuracyMatrix accuracy;
  std::vector<StepRecord> steps;
  std::vector<SimilarityRecord> similarity;
  std::vector<EvalRecord> evals;
  std::size_t samples_consumed = 0;
};

/// Single pass over the stream in task order; after each task the model is
/// evaluated on the test sets of every task so far. Dispatches to the ER loop
/// when config.method is ER.
RunResult run_stream(TaskStream stream, const std::vector<TaskDataset>& test_sets,
                     const MethodConfig& config, std::uint64_t seed,
                     const DiagnosticsConfig& diagnostics = {});

/// Experience replay: uniform reservoir bank, uniform retrieval, one CE loss
/// on the augmented union of incoming and replay samples.
RunResult run_er_baseline(TaskStream stream, const std::vector<TaskDataset>& test_sets,
                          const MethodConfig& config, std::uint64_t seed,
                          const DiagnosticsConfig& diagnostics = {});

}  // namespace onpro
