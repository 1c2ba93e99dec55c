#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "onpro/numerics.hpp"

namespace onpro {

/// Width of the projection head output.
inline constexpr std::size_t kProjectionDim = 128;

struct ModelSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden{64, 64};
  /// Classifier width: every class of every task, fixed up front.
  std::size_t num_classes = 0;

  void validate() const;
  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

/// Weight is (fan_in × fan_out).
struct DenseLayer {
  Tensor2 weight;
  std::vector<double> bias;

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Encoder f (affine+ReLU stack), projector g (affine to kProjectionDim,
/// followed by row normalization) and classifier φ (affine on f's output).
struct ModelParams {
  ModelSpec spec;
  std::vector<DenseLayer> encoder;
  DenseLayer projector;
  DenseLayer classifier;

  /// Every parameter array in a fixed order: encoder layers (weight, bias),
  /// projector, classifier.
  std::vector<std::span<double>> blocks();
  std::vector<std::span<const double>> blocks() const;
  std::size_t parameter_count() const;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// He-normal weights (variance 2/fan_in), zero biases.
ModelParams init_model(const ModelSpec& spec, std::uint64_t seed);
/// Same layout as `params`, all zeros. Used as a gradient accumulator.
ModelParams zeros_like(const ModelParams& params);

struct ForwardPass {
  Tensor2 features;    // f(x)
  Tensor2 embeddings;  // normalize(g(f(x))), when requested
  Tensor2 logits;      // φ(f(x)), when requested
  std::vector<AffineCache> encoder_caches;
  AffineCache projector_cache;
  NormalizedRows normalized;
  AffineCache classifier_cache;
  bool has_embeddings = false;
  bool has_logits = false;
};

ForwardPass forward(const ModelParams& params, const Tensor2& x, bool want_embeddings,
                    bool want_logits);

/// Accumulates parameter gradients into `grads` given dL/d(embeddings) and/or
/// dL/d(logits) for the rows of `pass`. Either gradient may be null.
void backward(const ModelParams& params, const ForwardPass& pass, const Tensor2* grad_embeddings,
              const Tensor2* grad_logits, ModelParams& grads);

Tensor2 embed(const ModelParams& params, const Tensor2& x);
Tensor2 classify(const ModelParams& params, const Tensor2& x);

/// Versioned little-endian binary dump; load(save(p)) == p bit for bit.
void save_checkpoint(const ModelParams& params, std::ostream& out);
ModelParams load_checkpoint(std::istream& in);

}  // namespace onpro
