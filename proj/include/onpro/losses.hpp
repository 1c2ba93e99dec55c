#pragma once

#include <span>

#include "onpro/numerics.hpp"
#include "onpro/prototypes.hpp"
#include "onpro/stream.hpp"

namespace onpro {

/// A scalar objective term with gradients w.r.t. its two prototype arguments.
struct PrototypeLoss {
  double value = 0.0;
  Tensor2 grad_first;   // dL / d(first argument)
  Tensor2 grad_second;  // dL / d(second argument)
};

/// Prototype-level InfoNCE. Row i of `anchors` is pulled toward row i of
/// `views`; every other row of either matrix is a negative:
///   −1/K Σ_i log exp(a_i·v_i/τ) / (Σ_j exp(a_i·v_j/τ) + Σ_{j≠i} exp(a_i·a_j/τ))
/// A single prototype yields exactly 0.
PrototypeLoss proto_contrastive(const Tensor2& anchors, const Tensor2& views, double tau);
/// Class-aligned variant; throws AlignmentError if the class lists differ.
PrototypeLoss proto_contrastive(const OnlinePrototypeSet& anchors, const OnlinePrototypeSet& views,
                                double tau);

/// Symmetrized ½[ℓ(P, P̂) + ℓ(P̂, P)].
PrototypeLoss l_pro(const Tensor2& prototypes, const Tensor2& views, double tau);
PrototypeLoss l_pro(const OnlinePrototypeSet& prototypes, const OnlinePrototypeSet& views,
                    double tau);

struct OpeLoss {
  PrototypeLoss incoming;  // new-class term
  PrototypeLoss replay;    // seen-class term
  double value() const { return incoming.value + replay.value; }
};

/// L_pro on the incoming prototypes plus L_pro on the replay prototypes. An
/// empty side is absent and contributes 0 (with empty gradients).
OpeLoss ope_loss(const OnlinePrototypeSet& incoming, const OnlinePrototypeSet& incoming_views,
                 const OnlinePrototypeSet& replay, const OnlinePrototypeSet& replay_views,
                 double tau);

struct EmbeddingLoss {
  double value = 0.0;
  Tensor2 grad;  // dL / dZ
};

/// Supervised contrastive term over one batch of unit embeddings, summed over
/// anchors. Anchors without a positive contribute 0.
EmbeddingLoss supcon_term(const Tensor2& z, std::span<const ClassId> labels, double tau_prime);

struct InsLoss {
  EmbeddingLoss incoming;
  EmbeddingLoss replay;
  double value() const { return incoming.value + replay.value; }
};

/// Instance-level loss: independent supervised contrastive sums over the
/// incoming views and over the replay views (no cross-batch pairs).
InsLoss supcon_ins(const Tensor2& z_incoming, std::span<const ClassId> labels_incoming,
                   const Tensor2& z_replay, std::span<const ClassId> labels_replay,
                   double tau_prime);

struct LogitLoss {
  double value = 0.0;
  Tensor2 grad;  // dL / dlogits, i.e. (softmax − target) / batch
};

/// Batch mean of −Σ_c target_c log softmax(logits)_c. Each target row must be
/// a probability vector (TargetError otherwise). An empty batch gives 0.
LogitLoss replay_ce(const Tensor2& logits, const Tensor2& targets);

Tensor2 softmax_rows(const Tensor2& logits);

struct LossBreakdown {
  double l_ope_new = 0.0;
  double l_ope_seen = 0.0;
  double l_ins = 0.0;
  double l_ce = 0.0;
  double total = 0.0;
};

/// A term's value plus its gradients laid out over the rows of one stacked
/// forward pass; an empty tensor stands for a zero gradient.
struct LossPart {
  double value = 0.0;
  Tensor2 grad_embeddings;
  Tensor2 grad_logits;
};

struct TotalLoss {
  LossBreakdown breakdown;
  Tensor2 grad_embeddings;
  Tensor2 grad_logits;
};

/// Unweighted sum of the four terms with gradients accumulated.
TotalLoss total_loss(const LossPart& ope_new, const LossPart& ope_seen, const LossPart& ins,
                     const LossPart& ce);

}  // namespace onpro
