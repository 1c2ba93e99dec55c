#pragma once

#include <cstddef>
#include <vector>

#include "onpro/memory.hpp"
#include "onpro/numerics.hpp"
#include "onpro/prototypes.hpp"
#include "onpro/stream.hpp"

namespace onpro {

struct ApfConfig {
  /// Share of the replay batch drawn by pair feedback.
  double alpha = 0.25;
  std::size_t replay_batch_size = 64;
  /// Symmetric Beta(c, c) parameter for the mixing coefficient.
  double mixup_concentration = 1.0;

  void validate() const;
  /// round(alpha · replay_batch_size).
  std::size_t feedback_budget() const;
};

/// λ·a + (1−λ)·b with both labels kept for soft-target cross-entropy.
/// Plain replay samples are represented with λ = 1 and label_b = label_a.
struct MixedSample {
  std::vector<double> features;
  ClassId label_a = 0;
  ClassId label_b = 0;
  double lambda = 1.0;

  ClassId dominant_label() const { return lambda >= 0.5 ? label_a : label_b; }
};

MixedSample mixup(const Sample& a, const Sample& b, double lambda);
MixedSample as_replay_entry(const Sample& s);

struct ApfBatch {
  /// Pair-feedback entries first (feedback_count of them), then the uniform part.
  std::vector<MixedSample> entries;
  std::size_t feedback_count = 0;
};

/// Two-stage replay batch of exactly min(m, bank size) entries.
/// Stage 1 visits pairs in descending probability; pair (i, j) gets
/// q = ⌊P(i,j)·n_feedback + 0.5⌋ draws from each class, mixed elementwise
/// (clipped so the batch never overflows). A pair whose class left the bank
/// gives its quota back to stage 2. Stage 2 draws the rest uniformly without
/// replacement and mixes it with a random permutation of itself.
/// `pairs == nullptr` makes the whole batch stage 2.
///
/// Draw order: per stage-1 pair, class i draws, class j draws, then one λ per
/// mixed entry; stage 2 uniform draws, the permutation, then one λ per entry.
ApfBatch apf_sample(const MemoryBank& bank, const PairProbability* pairs, const ApfConfig& cfg,
                    Rng& rng);

}  // namespace onpro
