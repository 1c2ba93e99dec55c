#include "onpro/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "onpro/errors.hpp"

namespace onpro {

namespace {

double log_sum_exp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void add_scaled(std::span<double> dst, std::span<const double> src, double scale) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += scale * src[i];
}

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be > 0");
}

}  // namespace

PrototypeLoss proto_contrastive(const Tensor2& anchors, const Tensor2& views, double tau) {
  check_tau(tau);
  if (!anchors.same_shape(views)) throw AlignmentError("prototype sets differ in shape");
  const std::size_t k = anchors.rows();
  if (k == 0) throw AlignmentError("prototype contrast needs at least one prototype");

  PrototypeLoss out{0.0, Tensor2(k, anchors.cols()), Tensor2(k, anchors.cols())};
  const Tensor2 cross = matmul_a_bt(anchors, views);  // a_i · v_j
  const Tensor2 self = matmul_a_bt(anchors, anchors);  // a_i · a_j
  const double scale = 1.0 / (static_cast<double>(k) * tau);

  // Terms for anchor i: k cross logits, then k-1 self logits (j != i).
  std::vector<double> logits(2 * k - 1);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t n = 0;
    for (std::size_t j = 0; j < k; ++j) logits[n++] = cross(i, j) / tau;
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) logits[n++] = self(i, j) / tau;
    }
    const double lse = log_sum_exp(logits);
    out.value += lse - logits[i];

    auto ga = out.grad_first.row(i);
    add_scaled(ga, views.row(i), -scale);
    n = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double w = std::exp(logits[n++] - lse);
      add_scaled(ga, views.row(j), w * scale);
      add_scaled(out.grad_second.row(j), anchors.row(i), (w - (i == j ? 1.0 : 0.0)) * scale);
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      const double w = std::exp(logits[n++] - lse);
      add_scaled(ga, anchors.row(j), w * scale);
      add_scaled(out.grad_first.row(j), anchors.row(i), w * scale);
    }
  }
  out.value /= static_cast<double>(k);
  return out;
}

PrototypeLoss proto_contrastive(const OnlinePrototypeSet& anchors, const OnlinePrototypeSet& views,
                                double tau) {
  if (anchors.classes() != views.classes()) {
    throw AlignmentError("prototype sets cover different classes");
  }
  return proto_contrastive(anchors.prototypes(), views.prototypes(), tau);
}

PrototypeLoss l_pro(const Tensor2& prototypes, const Tensor2& views, double tau) {
  PrototypeLoss forward = proto_contrastive(prototypes, views, tau);
  PrototypeLoss reverse = proto_contrastive(views, prototypes, tau);
  PrototypeLoss out;
  out.value = 0.5 * (forward.value + reverse.value);
  out.grad_first = forward.grad_first;
  out.grad_first += reverse.grad_second;
  out.grad_second = forward.grad_second;
  out.grad_second += reverse.grad_first;
  for (double& g : out.grad_first.values()) g *= 0.5;
  for (double& g : out.grad_second.values()) g *= 0.5;
  return out;
}

PrototypeLoss l_pro(const OnlinePrototypeSet& prototypes, const OnlinePrototypeSet& views,
                    double tau) {
  if (prototypes.classes() != views.classes()) {
    throw AlignmentError("prototype sets cover different classes");
  }
  return l_pro(prototypes.prototypes(), views.prototypes(), tau);
}

OpeLoss ope_loss(const OnlinePrototypeSet& incoming, const OnlinePrototypeSet& incoming_views,
                 const OnlinePrototypeSet& replay, const OnlinePrototypeSet& replay_views,
                 double tau) {
  OpeLoss out;
  if (!incoming.empty() || !incoming_views.empty()) {
    out.incoming = l_pro(incoming, incoming_views, tau);
  }
  if (!replay.empty() || !replay_views.empty()) {
    out.replay = l_pro(replay, replay_views, tau);
  }
  return out;
}

EmbeddingLoss supcon_term(const Tensor2& z, std::span<const ClassId> labels, double tau_prime) {
  check_tau(tau_prime);
  if (labels.size() != z.rows()) throw ShapeError("labels are not aligned with embedding rows");
  const std::size_t n = z.rows();
  EmbeddingLoss out{0.0, Tensor2(n, z.cols())};
  if (n < 2) return out;
  const Tensor2 sim = matmul_a_bt(z, z);

  std::vector<double> logits;
  std::vector<std::size_t> keys;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t positives = 0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k != i && labels[k] == labels[i]) ++positives;
    }
    if (positives == 0) continue;

    logits.clear();
    keys.clear();
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      logits.push_back(sim(i, k) / tau_prime);
      keys.push_back(k);
    }
    const double lse = log_sum_exp(logits);
    const double inv_pos = 1.0 / static_cast<double>(positives);
    double pos_sum = 0.0;
    for (std::size_t q = 0; q < keys.size(); ++q) {
      const std::size_t k = keys[q];
      const bool positive = labels[k] == labels[i];
      if (positive) pos_sum += logits[q];
      const double coeff = (std::exp(logits[q] - lse) - (positive ? inv_pos : 0.0)) / tau_prime;
      add_scaled(out.grad.row(i), z.row(k), coeff);
      add_scaled(out.grad.row(k), z.row(i), coeff);
    }
    out.value += lse - pos_sum * inv_pos;
  }
  return out;
}

InsLoss supcon_ins(const Tensor2& z_incoming, std::span<const ClassId> labels_incoming,
                   const Tensor2& z_replay, std::span<const ClassId> labels_replay,
                   double tau_prime) {
  return {supcon_term(z_incoming, labels_incoming, tau_prime),
          supcon_term(z_replay, labels_replay, tau_prime)};
}

Tensor2 softmax_rows(const Tensor2& logits) {
  Tensor2 out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const double lse = log_sum_exp(logits.row(r));
    auto src = logits.row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < src.size(); ++c) dst[c] = std::exp(src[c] - lse);
  }
  return out;
}

LogitLoss replay_ce(const Tensor2& logits, const Tensor2& targets) {
  if (!logits.same_shape(targets)) {
    throw TargetError("targets do not match the logits' shape");
  }
  for (std::size_t r = 0; r < targets.rows(); ++r) {
    double sum = 0.0;
    for (double t : targets.row(r)) {
      if (!(t >= 0.0) || !std::isfinite(t)) {
        throw TargetError("target row " + std::to_string(r) + " has a negative entry");
      }
      sum += t;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw TargetError("target row " + std::to_string(r) + " sums to " + std::to_string(sum));
    }
  }
  LogitLoss out{0.0, Tensor2(logits.rows(), logits.cols())};
  if (logits.rows() == 0) return out;
  const double inv_batch = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    auto t = targets.row(r);
    const double lse = log_sum_exp(z);
    auto g = out.grad.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) {
      if (t[c] != 0.0) out.value -= t[c] * (z[c] - lse);
      g[c] = (std::exp(z[c] - lse) - t[c]) * inv_batch;
    }
  }
  out.value *= inv_batch;
  return out;
}

TotalLoss total_loss(const LossPart& ope_new, const LossPart& ope_seen, const LossPart& ins,
                     const LossPart& ce) {
  TotalLoss out;
  out.breakdown.l_ope_new = ope_new.value;
  out.breakdown.l_ope_seen = ope_seen.value;
  out.breakdown.l_ins = ins.value;
  out.breakdown.l_ce = ce.value;
  out.breakdown.total = ope_new.value + ope_seen.value + ins.value + ce.value;
  for (const LossPart* part : {&ope_new, &ope_seen, &ins, &ce}) {
    for (auto [src, dst] : {std::pair{&part->grad_embeddings, &out.grad_embeddings},
                            std::pair{&part->grad_logits, &out.grad_logits}}) {
      if (src->empty()) continue;
      if (dst->empty()) {
        *dst = *src;
      } else {
        *dst += *src;
      }
    }
  }
  for (double v : {out.breakdown.l_ope_new, out.breakdown.l_ope_seen, out.breakdown.l_ins,
                   out.breakdown.l_ce}) {
    if (!std::isfinite(v)) throw NumericError("non-finite loss term");
  }
  return out;
}

}  // namespace onpro
