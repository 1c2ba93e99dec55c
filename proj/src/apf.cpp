#include "onpro/apf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "onpro/errors.hpp"

namespace onpro {

void ApfConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("apf alpha must lie in [0, 1]");
  if (replay_batch_size == 0) throw ConfigError("replay batch size must be >= 1");
  if (!(mixup_concentration > 0.0)) throw ConfigError("mixup concentration must be > 0");
}

std::size_t ApfConfig::feedback_budget() const {
  return static_cast<std::size_t>(std::llround(alpha * static_cast<double>(replay_batch_size)));
}

MixedSample mixup(const Sample& a, const Sample& b, double lambda) {
  if (a.features.size() != b.features.size()) throw ShapeError("mixup of unequal dimensions");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("mixup lambda must lie in [0, 1]");
  MixedSample out{std::vector<double>(a.features.size()), a.label, b.label, lambda};
  for (std::size_t i = 0; i < out.features.size(); ++i) {
    out.features[i] = lambda * a.features[i] + (1.0 - lambda) * b.features[i];
  }
  return out;
}

MixedSample as_replay_entry(const Sample& s) { return {s.features, s.label, s.label, 1.0}; }

ApfBatch apf_sample(const MemoryBank& bank, const PairProbability* pairs, const ApfConfig& cfg,
                    Rng& rng) {
  cfg.validate();
  ApfBatch out;
  const std::size_t target = std::min(cfg.replay_batch_size, bank.size());
  if (target == 0) return out;
  const double c = cfg.mixup_concentration;

  if (pairs != nullptr && !pairs->pairs.empty()) {
    const double budget = static_cast<double>(cfg.feedback_budget());
    std::vector<std::size_t> order(pairs->pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return pairs->pairs[a].probability > pairs->pairs[b].probability;
    });
    for (std::size_t k : order) {
      const ClassPair& pair = pairs->pairs[k];
      std::size_t quota =
          static_cast<std::size_t>(std::floor(pair.probability * budget + 0.5));
      quota = std::min(quota, target - out.entries.size());
      if (quota == 0) continue;
      if (!bank.contains(pair.first) || !bank.contains(pair.second)) continue;
      auto [xs, ys] = bank.samples_of_classes(pair.first, pair.second, quota, rng);
      for (std::size_t q = 0; q < quota; ++q) {
        out.entries.push_back(mixup(xs[q], ys[q], sample_beta(rng, c, c)));
      }
    }
  }
  out.feedback_count = out.entries.size();

  const std::size_t remaining = target - out.entries.size();
  std::vector<Sample> base = bank.sample_uniform(remaining, rng);
  std::vector<std::size_t> partner(base.size());
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  for (std::size_t q = 0; q < base.size(); ++q) {
    out.entries.push_back(mixup(base[q], base[partner[q]], sample_beta(rng, c, c)));
  }
  return out;
}

}  // namespace onpro
