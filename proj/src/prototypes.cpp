#include "onpro/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "onpro/errors.hpp"

namespace onpro {

std::optional<std::size_t> OnlinePrototypeSet::index_of(ClassId c) const {
  auto it = std::lower_bound(classes_.begin(), classes_.end(), c);
  if (it == classes_.end() || *it != c) return std::nullopt;
  return static_cast<std::size_t>(it - classes_.begin());
}

std::span<const double> OnlinePrototypeSet::prototype(ClassId c) const {
  auto k = index_of(c);
  if (!k) throw AlignmentError("class " + std::to_string(c) + " has no online prototype");
  return prototypes_.row(*k);
}

OnlinePrototypeSet compute_online_prototypes(const Tensor2& z, std::span<const ClassId> labels) {
  if (labels.size() != z.rows()) throw ShapeError("labels are not aligned with embedding rows");
  OnlinePrototypeSet set;
  set.classes_.assign(labels.begin(), labels.end());
  std::sort(set.classes_.begin(), set.classes_.end());
  set.classes_.erase(std::unique(set.classes_.begin(), set.classes_.end()), set.classes_.end());

  const std::size_t k = set.classes_.size();
  Tensor2 means(k, z.cols());
  set.counts_.assign(k, 0);
  set.row_slot_.resize(z.rows());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const std::size_t slot = *set.index_of(labels[r]);
    set.row_slot_[r] = slot;
    ++set.counts_[slot];
    auto dst = means.row(slot);
    auto src = z.row(r);
    for (std::size_t c = 0; c < z.cols(); ++c) dst[c] += src[c];
  }
  for (std::size_t s = 0; s < k; ++s) {
    const double inv = 1.0 / static_cast<double>(set.counts_[s]);
    for (double& v : means.row(s)) v *= inv;
  }
  NormalizedRows normalized = normalize_rows(means);
  set.prototypes_ = std::move(normalized.unit);
  set.mean_norms_ = std::move(normalized.norms);
  return set;
}

Tensor2 OnlinePrototypeSet::backward(const Tensor2& grad_prototypes) const {
  if (!grad_prototypes.same_shape(prototypes_)) {
    throw ShapeError("prototype gradient shape does not match the prototype set");
  }
  Tensor2 grad_means(prototypes_.rows(), prototypes_.cols());
  for (std::size_t s = 0; s < prototypes_.rows(); ++s) {
    auto g = l2_normalize_backward(grad_prototypes.row(s), prototypes_.row(s), mean_norms_[s]);
    const double inv = 1.0 / static_cast<double>(counts_[s]);
    auto dst = grad_means.row(s);
    for (std::size_t c = 0; c < g.size(); ++c) dst[c] = g[c] * inv;
  }
  Tensor2 grad_z(row_slot_.size(), prototypes_.cols());
  for (std::size_t r = 0; r < row_slot_.size(); ++r) {
    auto src = grad_means.row(row_slot_[r]);
    std::copy(src.begin(), src.end(), grad_z.row(r).begin());
  }
  return grad_z;
}

double PairProbability::probability(ClassId a, ClassId b) const {
  if (a > b) std::swap(a, b);
  for (const auto& p : pairs) {
    if (p.first == a && p.second == b) return p.probability;
  }
  return 0.0;
}

PairProbability pair_probabilities(const OnlinePrototypeSet& prototypes) {
  if (prototypes.size() < 2) {
    throw InsufficientClasses("pair probabilities need at least two classes, got " +
                              std::to_string(prototypes.size()));
  }
  PairProbability out;
  out.classes = prototypes.classes();
  const auto& p = prototypes.prototypes();
  std::vector<double> sq_dist;
  double min_sq = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < p.rows(); ++i) {
    for (std::size_t j = i + 1; j < p.rows(); ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < p.cols(); ++c) {
        const double diff = p(i, c) - p(j, c);
        d += diff * diff;
      }
      out.pairs.push_back({out.classes[i], out.classes[j], 0.0});
      sq_dist.push_back(d);
      min_sq = std::min(min_sq, d);
    }
  }
  // Shifting by the smallest distance leaves the normalized kernel unchanged.
  double total = 0.0;
  for (std::size_t k = 0; k < out.pairs.size(); ++k) {
    out.pairs[k].probability = std::exp(-(sq_dist[k] - min_sq));
    total += out.pairs[k].probability;
  }
  for (auto& pair : out.pairs) pair.probability /= total;
  return out;
}

}  // namespace onpro
