#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "onpro/numerics.hpp"

namespace onpro {

/// Contiguous class index in [0, total classes); doubles as the logit index.
using ClassId = int;

struct Sample {
  std::vector<double> features;
  ClassId label = 0;
  int task = 0;
  /// Unique within a stream bundle; lets tests check single-pass delivery.
  std::uint64_t id = 0;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct TaskDataset {
  int task = 0;
  std::vector<ClassId> classes;
  std::vector<Sample> samples;
};

struct AugmentConfig {
  double jitter_sigma = 0.1;
  double mask_prob = 0.1;

  void validate() const;
};

enum class BatchStatus { Batch, EndOfTask, EndOfStream };

struct StreamBatch {
  BatchStatus status = BatchStatus::EndOfStream;
  std::vector<Sample> samples;
};

/// Single-pass, single-consumer view over an ordered list of task datasets.
/// Within a task the samples are yielded in an order shuffled once when the
/// task starts; every sample is yielded exactly once.
class TaskStream {
 public:
  TaskStream(std::vector<TaskDataset> tasks, std::size_t batch_size, std::uint64_t seed);

  /// Next batch of at most batch_size samples, or an end-of-task marker after
  /// a task's last batch, or end-of-stream once every task is consumed.
  StreamBatch next_batch();

  const std::vector<TaskDataset>& tasks() const noexcept { return tasks_; }
  std::size_t num_tasks() const noexcept { return tasks_.size(); }
  std::size_t batch_size() const noexcept { return batch_size_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  /// Index of the task currently being consumed (== num_tasks() when done).
  std::size_t current_task() const noexcept { return task_index_; }
  std::size_t yielded() const noexcept { return yielded_; }
  std::size_t total_samples() const;

 private:
  void begin_task();

  std::vector<TaskDataset> tasks_;
  std::size_t batch_size_;
  std::size_t dim_ = 0;
  std::size_t num_classes_ = 0;
  Rng rng_;
  std::size_t task_index_ = 0;
  std::size_t cursor_ = 0;
  bool task_open_ = false;
  std::vector<std::size_t> order_;
  std::size_t yielded_ = 0;
};

struct StreamBundle {
  TaskStream stream;
  std::vector<TaskDataset> test_sets;
  /// Raw label for each ClassId (identity for synthetic streams).
  std::vector<long> class_labels;
};

struct SyntheticStreamConfig {
  std::size_t num_tasks = 5;
  std::size_t classes_per_task = 2;
  std::size_t samples_per_class = 500;
  std::size_t dim = 20;
  double class_separation = 4.0;
  std::size_t batch_size = 10;
  std::uint64_t seed = 0;
};

/// Isotropic unit-variance Gaussian blobs whose centers are pairwise exactly
/// `class_separation` apart (scaled orthonormal directions, so the number of
/// classes may not exceed `dim`). 80% of each class trains, 20% tests.
StreamBundle make_synthetic_stream(const SyntheticStreamConfig& cfg);

struct CsvStreamOptions {
  std::size_t batch_size = 10;
  bool header = false;
  std::uint64_t seed = 0;
  /// Held-out rows; when absent the last 20% of each class's rows are held out.
  std::optional<std::filesystem::path> test_path;
};

/// Rows are "label,f_1,...,f_D". `task_spec` lists the raw labels of each task
/// in order; labels are remapped to ClassIds in that order. Features are
/// standardized with statistics from the training rows only.
StreamBundle load_csv_stream(const std::filesystem::path& path,
                             const std::vector<std::vector<long>>& task_spec,
                             const CsvStreamOptions& options);

/// features' = mask ⊙ (features + ε), ε ~ N(0, σ²I), mask_j ~ Bernoulli(1 − p).
/// Draw order: all noise coordinates, then all mask coordinates.
Sample augment(const Sample& x, const AugmentConfig& cfg, Rng& rng);
std::vector<double> augment_features(std::span<const double> features, const AugmentConfig& cfg,
                                     Rng& rng);
/// The deterministic core of augment with explicit noise and mask.
std::vector<double> perturb(std::span<const double> features, std::span<const double> noise,
                            std::span<const double> mask);

/// Stacks sample features into a batch matrix.
Tensor2 features_matrix(std::span<const Sample> samples);

}  // namespace onpro
