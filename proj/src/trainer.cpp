#include "onpro/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "onpro/errors.hpp"

namespace onpro {

const char* method_name(Method m) { return m == Method::OnPro ? "onpro" : "er"; }

Method parse_method(const std::string& name) {
  if (name == "onpro") return Method::OnPro;
  if (name == "er") return Method::ER;
  throw ConfigError("unknown method '" + name + "' (expected onpro or er)");
}

const char* optimizer_name(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::Adam;
  if (name == "sgd") return Optimizer::Sgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

MethodConfig paper_defaults(Method method) {
  MethodConfig cfg;
  cfg.method = method;
  if (method == Method::ER) {
    cfg.use_ope_new = cfg.use_ope_seen = cfg.use_apf = cfg.use_ins = false;
    cfg.optimizer = Optimizer::Sgd;
    cfg.learning_rate = 0.1;
    cfg.weight_decay = 0.0;
  }
  return cfg;
}

void MethodConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (replay_batch_size == 0) throw ConfigError("replay_batch_size must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
  if (!(tau_prime > 0.0)) throw ConfigError("tau_prime must be > 0");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (!(mixup_concentration > 0.0)) throw ConfigError("mixup_concentration must be > 0");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (hidden.empty()) throw ConfigError("hidden must list at least one layer width");
  for (std::size_t h : hidden) {
    if (h == 0) throw ConfigError("hidden layer widths must be >= 1");
  }
  augment.validate();
}

// ---------------------------------------------------------------------------
// Metrics

AccuracyMatrix AccuracyMatrix::from_rows(std::vector<std::vector<double>> rows) {
  AccuracyMatrix m;
  for (auto& r : rows) m.add_row(std::move(r));
  return m;
}

void AccuracyMatrix::add_row(std::vector<double> row) {
  if (row.size() != rows_.size() + 1) {
    throw MetricError("accuracy row " + std::to_string(rows_.size() + 1) + " must hold " +
                      std::to_string(rows_.size() + 1) + " entries, got " +
                      std::to_string(row.size()));
  }
  for (double a : row) {
    if (!(a >= 0.0 && a <= 1.0)) throw MetricError("accuracy outside [0, 1]");
  }
  rows_.push_back(std::move(row));
}

double average_accuracy(const AccuracyMatrix& matrix) {
  if (matrix.num_tasks() == 0) throw MetricError("average accuracy of an empty matrix");
  const auto& last = matrix.rows().back();
  double sum = 0.0;
  for (double a : last) sum += a;
  return sum / static_cast<double>(last.size());
}

double average_forgetting(const AccuracyMatrix& matrix) {
  const std::size_t t = matrix.num_tasks();
  if (t < 2) throw MetricError("average forgetting needs at least two tasks");
  const auto& last = matrix.rows().back();
  double sum = 0.0;
  for (std::size_t j = 0; j + 1 < t; ++j) {
    double best = matrix.at(j, j);
    for (std::size_t k = j + 1; k + 1 < t; ++k) best = std::max(best, matrix.at(k, j));
    sum += best - last[j];
  }
  return sum / static_cast<double>(t - 1);
}

double accuracy_from_logits(const Tensor2& logits, std::span<const ClassId> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("labels are not aligned with logits");
  if (labels.empty()) throw EvalError("accuracy of an empty set");
  std::size_t correct = 0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const auto best = static_cast<ClassId>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

double evaluate(const ModelParams& params, std::span<const Sample> test_set) {
  if (test_set.empty()) throw EvalError("cannot evaluate on an empty test set");
  std::vector<ClassId> labels;
  labels.reserve(test_set.size());
  for (const auto& s : test_set) labels.push_back(s.label);
  return accuracy_from_logits(classify(params, features_matrix(test_set)), labels);
}

std::vector<ClassSimilarity> prototype_similarity_probe(const ModelParams& params,
                                                        const MemoryBank& bank,
                                                        const OnlinePrototypeSet& online) {
  std::vector<ClassSimilarity> out;
  for (ClassId c : online.classes()) {
    if (!bank.contains(c)) continue;
    const auto members = bank.samples_of(c);
    const Tensor2 z = embed(params, features_matrix(members));
    const std::vector<ClassId> labels(members.size(), c);
    const auto global = compute_online_prototypes(z, labels);
    const double cos = dot(online.prototype(c), global.prototype(c));
    out.push_back({c, std::clamp(cos, -1.0, 1.0)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objectives

namespace {

/// Writes `src` into rows [first, first + src.rows()) of `dst`.
void add_rows(Tensor2& dst, std::size_t first, const Tensor2& src) {
  for (std::size_t r = 0; r < src.rows(); ++r) {
    auto d = dst.row(first + r);
    auto s = src.row(r);
    for (std::size_t c = 0; c < s.size(); ++c) d[c] += s[c];
  }
}

Tensor2 gather_rows(const Tensor2& m, std::span<const std::size_t> rows) {
  Tensor2 out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(m.row(rows[i]).begin(), m.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
std::vector<T> twice(const std::vector<T>& v) {
  std::vector<T> out(v);
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace

ObjectiveResult onpro_objective(const ModelParams& params, const StepInputs& in,
                                const ObjectiveOptions& options, ModelParams* grads) {
  const std::size_t n = in.incoming_labels.size();
  const std::size_t m = in.replay_labels.size();
  if (in.incoming_original.rows() != n || in.incoming_augmented.rows() != n ||
      in.replay_original.rows() != m || in.replay_augmented.rows() != m ||
      in.replay_targets.rows() != m) {
    throw ShapeError("step inputs are not row-aligned with their labels");
  }
  const Tensor2 x = stack_rows(
      {&in.incoming_original, &in.incoming_augmented, &in.replay_original, &in.replay_augmented});
  const ForwardPass pass = forward(params, x, true, true);
  const Tensor2& z = pass.embeddings;
  const std::size_t rows = z.rows();
  const std::size_t dim = z.cols();
  const std::size_t in_orig = 0, in_aug = n, rb_orig = 2 * n, rb_aug = 2 * n + m;

  ObjectiveResult result;
  LossPart ope_new, ope_seen, ins, ce;

  if (options.use_ope_new && n > 0) {
    const auto p = compute_online_prototypes(slice_rows(z, in_orig, n), in.incoming_labels);
    const auto p_hat = compute_online_prototypes(slice_rows(z, in_aug, n), in.incoming_labels);
    const PrototypeLoss loss = l_pro(p, p_hat, options.tau);
    ope_new.value = loss.value;
    ope_new.grad_embeddings = Tensor2(rows, dim);
    add_rows(ope_new.grad_embeddings, in_orig, p.backward(loss.grad_first));
    add_rows(ope_new.grad_embeddings, in_aug, p_hat.backward(loss.grad_second));
  }

  if (m > 0) {
    const Tensor2 zb = slice_rows(z, rb_orig, m);
    const Tensor2 zb_hat = slice_rows(z, rb_aug, m);
    result.replay_prototypes = compute_online_prototypes(zb, in.replay_labels);

    if (options.use_ope_seen) {
      std::vector<std::size_t> keep;
      std::vector<ClassId> kept_labels;
      for (std::size_t r = 0; r < m; ++r) {
        const ClassId c = in.replay_labels[r];
        if (std::find(options.seen_excluded.begin(), options.seen_excluded.end(), c) ==
            options.seen_excluded.end()) {
          keep.push_back(r);
          kept_labels.push_back(c);
        }
      }
      if (!keep.empty()) {
        const auto pb = compute_online_prototypes(gather_rows(zb, keep), kept_labels);
        const auto pb_hat = compute_online_prototypes(gather_rows(zb_hat, keep), kept_labels);
        const PrototypeLoss loss = l_pro(pb, pb_hat, options.tau);
        ope_seen.value = loss.value;
        ope_seen.grad_embeddings = Tensor2(rows, dim);
        const Tensor2 g = pb.backward(loss.grad_first);
        const Tensor2 g_hat = pb_hat.backward(loss.grad_second);
        for (std::size_t i = 0; i < keep.size(); ++i) {
          auto d = ope_seen.grad_embeddings.row(rb_orig + keep[i]);
          auto d_hat = ope_seen.grad_embeddings.row(rb_aug + keep[i]);
          for (std::size_t c = 0; c < dim; ++c) {
            d[c] += g(i, c);
            d_hat[c] += g_hat(i, c);
          }
        }
      }
    }

    const Tensor2 logits = slice_rows(pass.logits, rb_aug, m);
    const LogitLoss loss = replay_ce(logits, in.replay_targets);
    ce.value = loss.value;
    ce.grad_logits = Tensor2(rows, pass.logits.cols());
    add_rows(ce.grad_logits, rb_aug, loss.grad);
  }

  if (options.use_ins) {
    const InsLoss loss =
        supcon_ins(slice_rows(z, 0, 2 * n), twice(in.incoming_labels), slice_rows(z, rb_orig, 2 * m),
                   twice(in.replay_labels), options.tau_prime);
    ins.value = loss.value();
    ins.grad_embeddings = Tensor2(rows, dim);
    add_rows(ins.grad_embeddings, 0, loss.incoming.grad);
    add_rows(ins.grad_embeddings, rb_orig, loss.replay.grad);
  }

  TotalLoss total = total_loss(ope_new, ope_seen, ins, ce);
  result.breakdown = total.breakdown;
  if (grads != nullptr) {
    backward(params, pass, total.grad_embeddings.empty() ? nullptr : &total.grad_embeddings,
             total.grad_logits.empty() ? nullptr : &total.grad_logits, *grads);
  }
  return result;
}

LossBreakdown er_objective(const ModelParams& params, const Tensor2& x,
                           std::span<const ClassId> labels, ModelParams* grads) {
  const ForwardPass pass = forward(params, x, false, true);
  Tensor2 targets(labels.size(), params.spec.num_classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    targets(r, static_cast<std::size_t>(labels[r])) = 1.0;
  }
  const LogitLoss loss = replay_ce(pass.logits, targets);
  if (grads != nullptr) backward(params, pass, nullptr, &loss.grad, *grads);
  LossBreakdown out;
  out.l_ce = loss.value;
  out.total = loss.value;
  return out;
}

// ---------------------------------------------------------------------------
// Training loop

TrainerState::TrainerState(const MethodConfig& cfg, const ModelSpec& spec, std::uint64_t seed)
    : config(cfg), bank(cfg.memory_size), rng(seed) {
  config.validate();
  ModelSpec s = spec;
  s.hidden = config.hidden;
  // The model initializer takes its seed as the first draw of the run generator.
  params = init_model(s, rng());
  optimizer.learning_rate = config.learning_rate;
  optimizer.weight_decay = config.weight_decay;
  optimizer.beta1 = config.beta1;
  optimizer.beta2 = config.beta2;
  optimizer.epsilon = config.epsilon;
}

StepInputs prepare_step_inputs(TrainerState& state, std::span<const Sample> batch) {
  const MethodConfig& cfg = state.config;
  StepInputs in;

  ApfBatch replay;
  if (!state.bank.empty()) {
    std::optional<PairProbability> pairs;
    if (cfg.use_apf && state.cached_replay_prototypes && state.cached_replay_prototypes->size() >= 2) {
      pairs = pair_probabilities(*state.cached_replay_prototypes);
    }
    ApfConfig apf{cfg.alpha, cfg.replay_batch_size, cfg.mixup_concentration};
    replay = apf_sample(state.bank, pairs ? &*pairs : nullptr, apf, state.rng);
  }
  in.feedback_count = replay.feedback_count;

  in.incoming_original = features_matrix(batch);
  in.incoming_augmented = Tensor2(in.incoming_original.rows(), in.incoming_original.cols());
  for (std::size_t r = 0; r < batch.size(); ++r) {
    auto v = augment_features(batch[r].features, cfg.augment, state.rng);
    std::copy(v.begin(), v.end(), in.incoming_augmented.row(r).begin());
    in.incoming_labels.push_back(batch[r].label);
  }

  const std::size_t m = replay.entries.size();
  const std::size_t dim = in.incoming_original.cols();
  in.replay_original = Tensor2(m, dim);
  in.replay_augmented = Tensor2(m, dim);
  in.replay_targets = Tensor2(m, state.params.spec.num_classes);
  for (std::size_t r = 0; r < m; ++r) {
    const MixedSample& e = replay.entries[r];
    std::copy(e.features.begin(), e.features.end(), in.replay_original.row(r).begin());
    auto v = augment_features(e.features, cfg.augment, state.rng);
    std::copy(v.begin(), v.end(), in.replay_augmented.row(r).begin());
    in.replay_labels.push_back(e.dominant_label());
    in.replay_targets(r, static_cast<std::size_t>(e.label_a)) += e.lambda;
    in.replay_targets(r, static_cast<std::size_t>(e.label_b)) += 1.0 - e.lambda;
  }
  return in;
}

namespace {

void apply_update(TrainerState& state, const ModelParams& grads) {
  if (state.config.optimizer == Optimizer::Adam) {
    adam_step(state.optimizer, state.params.blocks(), grads.blocks());
  } else {
    sgd_step(state.params.blocks(), grads.blocks(), state.config.learning_rate,
             state.config.weight_decay);
  }
}

StepRecord onpro_step(TrainerState& state, std::span<const Sample> batch) {
  const MethodConfig& cfg = state.config;
  const StepInputs in = prepare_step_inputs(state, batch);

  ObjectiveOptions options{cfg.use_ope_new, cfg.use_ope_seen, cfg.use_ins, cfg.tau, cfg.tau_prime,
                           {}};
  if (cfg.seen_excludes_new) options.seen_excluded = state.current_classes;

  ModelParams grads = zeros_like(state.params);
  ObjectiveResult result = onpro_objective(state.params, in, options, &grads);
  apply_update(state, grads);
  state.bank.update(batch, state.rng);
  if (!in.replay_labels.empty()) state.cached_replay_prototypes = std::move(result.replay_prototypes);

  return {state.step++, state.current_task, result.breakdown, in.replay_labels.size(),
          in.feedback_count};
}

StepRecord er_step(TrainerState& state, std::span<const Sample> batch) {
  const MethodConfig& cfg = state.config;
  const std::vector<Sample> replay = state.bank.sample_uniform(cfg.replay_batch_size, state.rng);
  std::vector<Sample> combined(batch.begin(), batch.end());
  combined.insert(combined.end(), replay.begin(), replay.end());
  std::vector<ClassId> labels;
  for (auto& s : combined) {
    s.features = augment_features(s.features, cfg.augment, state.rng);
    labels.push_back(s.label);
  }
  ModelParams grads = zeros_like(state.params);
  const LossBreakdown losses = er_objective(state.params, features_matrix(combined), labels, &grads);
  apply_update(state, grads);
  state.bank.update(batch, state.rng);
  return {state.step++, state.current_task, losses, replay.size(), 0};
}

bool same_members(const MemoryBank& bank, ClassId c, std::span<const Sample> batch) {
  std::vector<std::uint64_t> in_bank, in_batch;
  for (std::size_t slot : bank.class_slots(c)) in_bank.push_back(bank.slots()[slot].id);
  for (const auto& s : batch) {
    if (s.label == c) in_batch.push_back(s.id);
  }
  std::sort(in_bank.begin(), in_bank.end());
  std::sort(in_batch.begin(), in_batch.end());
  return in_bank == in_batch;
}

void record_similarity(const TrainerState& state, std::span<const Sample> batch,
                       bool first_step, std::vector<SimilarityRecord>& out) {
  std::vector<ClassId> labels;
  for (const auto& s : batch) labels.push_back(s.label);
  const auto online =
      compute_online_prototypes(embed(state.params, features_matrix(batch)), labels);
  for (const auto& sim : prototype_similarity_probe(state.params, state.bank, online)) {
    out.push_back({state.step - 1, state.current_task, sim.cls, sim.similarity, first_step,
                   same_members(state.bank, sim.cls, batch)});
  }
}

void validate_run(const TaskStream& stream, const std::vector<TaskDataset>& test_sets,
                  const MethodConfig& config) {
  config.validate();
  if (stream.num_tasks() == 0) throw ConfigError("stream has no tasks");
  if (test_sets.size() != stream.num_tasks()) {
    throw ConfigError("expected one test set per task (" + std::to_string(stream.num_tasks()) +
                      "), got " + std::to_string(test_sets.size()));
  }
  for (const auto& t : test_sets) {
    if (t.samples.empty()) {
      throw ConfigError("test set of task " + std::to_string(t.task) + " is empty");
    }
    for (const auto& s : t.samples) {
      if (s.features.size() != stream.dim()) throw ConfigError("test set dimension mismatch");
      if (s.label < 0 || static_cast<std::size_t>(s.label) >= stream.num_classes()) {
        throw ConfigError("test label outside the stream's classes");
      }
    }
  }
}

RunResult run_loop(TaskStream stream, const std::vector<TaskDataset>& test_sets,
                   const MethodConfig& config, std::uint64_t seed,
                   const DiagnosticsConfig& diagnostics) {
  validate_run(stream, test_sets, config);
  ModelSpec spec{stream.dim(), config.hidden, stream.num_classes()};
  TrainerState state(config, spec, seed);

  auto eval_seen = [&](std::size_t through) {
    std::vector<double> row;
    for (std::size_t j = 0; j <= through; ++j) row.push_back(evaluate(state.params, test_sets[j].samples));
    return row;
  };

  RunResult result;
  bool first_step = true;
  state.current_classes = stream.tasks().front().classes;
  for (;;) {
    StreamBatch next = stream.next_batch();
    if (next.status == BatchStatus::EndOfStream) break;
    if (next.status == BatchStatus::EndOfTask) {
      result.accuracy.add_row(eval_seen(static_cast<std::size_t>(state.current_task)));
      ++state.current_task;
      if (static_cast<std::size_t>(state.current_task) < stream.num_tasks()) {
        state.current_classes = stream.tasks()[static_cast<std::size_t>(state.current_task)].classes;
      }
      first_step = true;
      continue;
    }
    result.samples_consumed += next.samples.size();
    StepRecord rec = config.method == Method::OnPro ? onpro_step(state, next.samples)
                                                    : er_step(state, next.samples);
    if (diagnostics.loss_series) result.steps.push_back(rec);
    if (diagnostics.similarity_probe && config.method == Method::OnPro) {
      record_similarity(state, next.samples, first_step, result.similarity);
    }
    if (diagnostics.eval_every > 0 && state.step % diagnostics.eval_every == 0) {
      const auto row = eval_seen(static_cast<std::size_t>(state.current_task));
      double mean = 0.0;
      for (double a : row) mean += a;
      result.evals.push_back({state.step - 1, state.current_task, mean / static_cast<double>(row.size())});
    }
    first_step = false;
  }
  result.model = std::move(state.params);
  return result;
}

}  // namespace

StepRecord train_step(TrainerState& state, std::span<const Sample> batch) {
  return state.config.method == Method::OnPro ? onpro_step(state, batch) : er_step(state, batch);
}

RunResult run_stream(TaskStream stream, const std::vector<TaskDataset>& test_sets,
                     const MethodConfig& config, std::uint64_t seed,
                     const DiagnosticsConfig& diagnostics) {
  return run_loop(std::move(stream), test_sets, config, seed, diagnostics);
}

RunResult run_er_baseline(TaskStream stream, const std::vector<TaskDataset>& test_sets,
                          const MethodConfig& config, std::uint64_t seed,
                          const DiagnosticsConfig& diagnostics) {
  MethodConfig er = config;
  er.method = Method::ER;
  er.use_ope_new = er.use_ope_seen = er.use_apf = er.use_ins = false;
  return run_loop(std::move(stream), test_sets, er, seed, diagnostics);
}

}  // namespace onpro
