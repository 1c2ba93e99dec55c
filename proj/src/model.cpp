#include "onpro/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "onpro/errors.hpp"

namespace onpro {

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be >= 1");
  if (num_classes == 0) throw ConfigError("model num_classes must be >= 1");
  if (hidden.empty()) throw ConfigError("encoder needs at least one hidden layer");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden layer widths must be >= 1");
  }
}

namespace {

DenseLayer he_layer(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  DenseLayer layer{Tensor2(fan_in, fan_out), std::vector<double>(fan_out, 0.0)};
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& w : layer.weight.values()) w = sample_normal(rng, 0.0, stddev);
  return layer;
}

DenseLayer zero_layer(const DenseLayer& like) {
  return {Tensor2(like.weight.rows(), like.weight.cols()), std::vector<double>(like.bias.size())};
}

}  // namespace

ModelParams init_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  ModelParams p;
  p.spec = spec;
  std::size_t in = spec.input_dim;
  for (std::size_t h : spec.hidden) {
    p.encoder.push_back(he_layer(in, h, rng));
    in = h;
  }
  p.projector = he_layer(in, kProjectionDim, rng);
  p.classifier = he_layer(in, spec.num_classes, rng);
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z;
  z.spec = params.spec;
  for (const auto& l : params.encoder) z.encoder.push_back(zero_layer(l));
  z.projector = zero_layer(params.projector);
  z.classifier = zero_layer(params.classifier);
  return z;
}

std::vector<std::span<double>> ModelParams::blocks() {
  std::vector<std::span<double>> out;
  for (auto& l : encoder) {
    out.push_back(l.weight.values());
    out.push_back(l.bias);
  }
  out.push_back(projector.weight.values());
  out.push_back(projector.bias);
  out.push_back(classifier.weight.values());
  out.push_back(classifier.bias);
  return out;
}

std::vector<std::span<const double>> ModelParams::blocks() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : encoder) {
    out.push_back(l.weight.values());
    out.push_back(l.bias);
  }
  out.push_back(projector.weight.values());
  out.push_back(projector.bias);
  out.push_back(classifier.weight.values());
  out.push_back(classifier.bias);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (auto b : blocks()) n += b.size();
  return n;
}

ForwardPass forward(const ModelParams& params, const Tensor2& x, bool want_embeddings,
                    bool want_logits) {
  if (x.cols() != params.spec.input_dim) {
    throw ShapeError("input has " + std::to_string(x.cols()) + " features, model expects " +
                     std::to_string(params.spec.input_dim));
  }
  ForwardPass pass;
  Tensor2 h = x;
  for (const auto& layer : params.encoder) {
    auto r = affine_relu_forward(h, layer.weight, layer.bias);
    h = std::move(r.output);
    pass.encoder_caches.push_back(std::move(r.cache));
  }
  pass.features = std::move(h);
  if (want_embeddings) {
    auto r = affine_forward(pass.features, params.projector.weight, params.projector.bias);
    pass.projector_cache = std::move(r.cache);
    pass.normalized = normalize_rows(r.output);
    pass.embeddings = pass.normalized.unit;
    pass.has_embeddings = true;
  }
  if (want_logits) {
    auto r = affine_forward(pass.features, params.classifier.weight, params.classifier.bias);
    pass.classifier_cache = std::move(r.cache);
    pass.logits = std::move(r.output);
    pass.has_logits = true;
  }
  return pass;
}

void backward(const ModelParams& params, const ForwardPass& pass, const Tensor2* grad_embeddings,
              const Tensor2* grad_logits, ModelParams& grads) {
  if (pass.encoder_caches.size() != params.encoder.size() ||
      grads.encoder.size() != params.encoder.size()) {
    throw CacheError("forward pass does not match the model layout");
  }
  Tensor2 grad_features(pass.features.rows(), pass.features.cols());
  if (grad_embeddings != nullptr) {
    if (!pass.has_embeddings) throw CacheError("embedding gradient without an embedding forward");
    if (!grad_embeddings->same_shape(pass.embeddings)) {
      throw CacheError("embedding gradient shape does not match the cached forward");
    }
    Tensor2 grad_proj = normalize_rows_backward(*grad_embeddings, pass.normalized);
    grad_features += affine_backward(grad_proj, pass.projector_cache, params.projector.weight,
                                     grads.projector.weight, grads.projector.bias);
  }
  if (grad_logits != nullptr) {
    if (!pass.has_logits) throw CacheError("logit gradient without a logit forward");
    if (!grad_logits->same_shape(pass.logits)) {
      throw CacheError("logit gradient shape does not match the cached forward");
    }
    grad_features += affine_backward(*grad_logits, pass.classifier_cache, params.classifier.weight,
                                     grads.classifier.weight, grads.classifier.bias);
  }
  Tensor2 g = std::move(grad_features);
  for (std::size_t i = params.encoder.size(); i-- > 0;) {
    g = affine_backward(g, pass.encoder_caches[i], params.encoder[i].weight,
                        grads.encoder[i].weight, grads.encoder[i].bias);
  }
}

Tensor2 embed(const ModelParams& params, const Tensor2& x) {
  return forward(params, x, true, false).embeddings;
}

Tensor2 classify(const ModelParams& params, const Tensor2& x) {
  return forward(params, x, false, true).logits;
}

namespace {

constexpr char kMagic[8] = {'O', 'N', 'P', 'R', 'O', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const ModelParams& params, std::ostream& out) {
  out.write(kMagic, sizeof kMagic);
  const std::uint32_t version = kCheckpointVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof version);
  put_u64(out, params.spec.input_dim);
  put_u64(out, params.spec.num_classes);
  put_u64(out, params.spec.hidden.size());
  for (std::size_t h : params.spec.hidden) put_u64(out, h);
  put_u64(out, kProjectionDim);
  for (auto block : params.blocks()) {
    put_u64(out, block.size());
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("failed to write checkpoint");
}

ModelParams load_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw CheckpointError("not a model checkpoint");
  }
  std::uint32_t version = 0;
  if (!in.read(reinterpret_cast<char*>(&version), sizeof version)) {
    throw CheckpointError("truncated checkpoint");
  }
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  ModelSpec spec;
  spec.input_dim = get_u64(in);
  spec.num_classes = get_u64(in);
  spec.hidden.resize(get_u64(in));
  for (auto& h : spec.hidden) h = get_u64(in);
  if (get_u64(in) != kProjectionDim) throw CheckpointError("projection width mismatch");
  spec.validate();

  ModelParams params = zeros_like(init_model(spec, 0));
  for (auto block : params.blocks()) {
    if (get_u64(in) != block.size()) throw CheckpointError("parameter block size mismatch");
    if (!in.read(reinterpret_cast<char*>(block.data()),
                 static_cast<std::streamsize>(block.size() * sizeof(double)))) {
      throw CheckpointError("truncated checkpoint");
    }
  }
  return params;
}

}  // namespace onpro
