#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "onpro/numerics.hpp"
#include "onpro/stream.hpp"

namespace onpro {

/// Per-class unit-norm mean embeddings of one mini-batch. Classes are stored
/// in ascending id order. The set remembers which source row fed which
/// prototype so gradients can be routed back to the embeddings.
class OnlinePrototypeSet {
 public:
  OnlinePrototypeSet() = default;

  std::size_t size() const noexcept { return classes_.size(); }
  bool empty() const noexcept { return classes_.empty(); }
  const std::vector<ClassId>& classes() const noexcept { return classes_; }
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }
  /// K × dim, row k is the prototype of classes()[k].
  const Tensor2& prototypes() const noexcept { return prototypes_; }
  std::optional<std::size_t> index_of(ClassId c) const;
  std::span<const double> prototype(ClassId c) const;

  /// dL/dZ for the source rows given dL/d(prototypes).
  Tensor2 backward(const Tensor2& grad_prototypes) const;

 private:
  friend OnlinePrototypeSet compute_online_prototypes(const Tensor2&, std::span<const ClassId>);

  std::vector<ClassId> classes_;
  std::vector<std::size_t> counts_;
  Tensor2 prototypes_;
  std::vector<double> mean_norms_;
  std::vector<std::size_t> row_slot_;
};

/// Arithmetic mean of the rows of each class, then l2-normalized.
/// Throws NormalizationError when a class mean is the zero vector.
OnlinePrototypeSet compute_online_prototypes(const Tensor2& z, std::span<const ClassId> labels);

struct ClassPair {
  ClassId first = 0;
  ClassId second = 0;
  double probability = 0.0;
};

/// Normalized Gaussian-kernel weights over unordered class pairs.
struct PairProbability {
  std::vector<ClassId> classes;
  /// Pairs (first < second) in lexicographic order.
  std::vector<ClassPair> pairs;

  double probability(ClassId a, ClassId b) const;
};

/// P(i,j) ∝ exp(−‖p_i − p_j‖²) over all unordered pairs, normalized to sum 1.
/// Throws InsufficientClasses for fewer than two prototypes.
PairProbability pair_probabilities(const OnlinePrototypeSet& prototypes);

}  // namespace onpro
