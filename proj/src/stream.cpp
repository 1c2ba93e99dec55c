#include "onpro/stream.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "onpro/errors.hpp"

namespace onpro {

void AugmentConfig::validate() const {
  if (!(jitter_sigma >= 0.0) || !std::isfinite(jitter_sigma)) {
    throw ConfigError("augment.jitter_sigma must be >= 0");
  }
  if (!(mask_prob >= 0.0 && mask_prob < 1.0)) {
    throw ConfigError("augment.mask_prob must lie in [0, 1)");
  }
}

TaskStream::TaskStream(std::vector<TaskDataset> tasks, std::size_t batch_size, std::uint64_t seed)
    : tasks_(std::move(tasks)), batch_size_(batch_size), rng_(seed) {
  if (batch_size_ == 0) throw ConfigError("batch size must be >= 1");
  std::vector<ClassId> all_classes;
  for (const auto& t : tasks_) {
    for (ClassId c : t.classes) all_classes.push_back(c);
    for (const auto& s : t.samples) {
      if (dim_ == 0) dim_ = s.features.size();
      if (s.features.size() != dim_) throw ShapeError("samples of differing dimension in stream");
      if (std::find(t.classes.begin(), t.classes.end(), s.label) == t.classes.end()) {
        throw SchemaError("sample label " + std::to_string(s.label) + " outside its task's classes");
      }
    }
  }
  std::sort(all_classes.begin(), all_classes.end());
  if (std::adjacent_find(all_classes.begin(), all_classes.end()) != all_classes.end()) {
    throw SchemaError("class sets of different tasks must be disjoint");
  }
  num_classes_ = all_classes.empty() ? 0 : static_cast<std::size_t>(all_classes.back()) + 1;
}

std::size_t TaskStream::total_samples() const {
  std::size_t n = 0;
  for (const auto& t : tasks_) n += t.samples.size();
  return n;
}

void TaskStream::begin_task() {
  order_.resize(tasks_[task_index_].samples.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
  task_open_ = true;
}

StreamBatch TaskStream::next_batch() {
  if (task_index_ >= tasks_.size()) return {BatchStatus::EndOfStream, {}};
  if (!task_open_) begin_task();
  const auto& samples = tasks_[task_index_].samples;
  if (cursor_ >= order_.size()) {
    task_open_ = false;
    ++task_index_;
    return {BatchStatus::EndOfTask, {}};
  }
  const std::size_t n = std::min(batch_size_, order_.size() - cursor_);
  StreamBatch out{BatchStatus::Batch, {}};
  out.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.samples.push_back(samples[order_[cursor_ + i]]);
  cursor_ += n;
  yielded_ += n;
  return out;
}

StreamBundle make_synthetic_stream(const SyntheticStreamConfig& cfg) {
  if (cfg.num_tasks == 0 || cfg.classes_per_task == 0 || cfg.samples_per_class == 0 ||
      cfg.dim == 0 || cfg.batch_size == 0) {
    throw ConfigError("synthetic stream counts must all be >= 1");
  }
  if (!(cfg.class_separation > 0.0)) throw ConfigError("class_separation must be > 0");
  const std::size_t num_classes = cfg.num_tasks * cfg.classes_per_task;
  if (num_classes > cfg.dim) {
    throw ConfigError("dim " + std::to_string(cfg.dim) + " is too small to place " +
                      std::to_string(num_classes) + " equidistant class centers");
  }

  Rng rng(cfg.seed);
  // Random orthonormal directions via Gram-Schmidt; retries a draw that is
  // numerically dependent on the previous ones.
  std::vector<std::vector<double>> basis;
  while (basis.size() < num_classes) {
    std::vector<double> v(cfg.dim);
    for (double& x : v) x = sample_normal(rng);
    for (const auto& q : basis) {
      const double proj = dot(v, q);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= proj * q[i];
    }
    if (norm2(v) < 1e-6) continue;
    basis.push_back(l2_normalize(v));
  }
  const double radius = cfg.class_separation / std::sqrt(2.0);

  const std::size_t n_test = cfg.samples_per_class / 5;
  const std::size_t n_train = cfg.samples_per_class - n_test;
  std::vector<TaskDataset> train(cfg.num_tasks);
  std::vector<TaskDataset> test(cfg.num_tasks);
  std::uint64_t next_id = 0;
  for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
    train[t].task = test[t].task = static_cast<int>(t);
    for (std::size_t k = 0; k < cfg.classes_per_task; ++k) {
      const auto c = static_cast<ClassId>(t * cfg.classes_per_task + k);
      train[t].classes.push_back(c);
      test[t].classes.push_back(c);
      for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
        Sample s;
        s.label = c;
        s.task = static_cast<int>(t);
        s.id = next_id++;
        s.features.resize(cfg.dim);
        for (std::size_t d = 0; d < cfg.dim; ++d) {
          s.features[d] = radius * basis[static_cast<std::size_t>(c)][d] + sample_normal(rng);
        }
        (i < n_train ? train[t] : test[t]).samples.push_back(std::move(s));
      }
    }
  }
  std::vector<long> labels(num_classes);
  std::iota(labels.begin(), labels.end(), 0L);
  return {TaskStream(std::move(train), cfg.batch_size, cfg.seed), std::move(test),
          std::move(labels)};
}

namespace {

struct CsvRow {
  long label;
  std::vector<double> features;
  std::size_t line;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<CsvRow> read_csv_rows(const std::filesystem::path& path, bool header) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<CsvRow> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (header && line_no == 1) continue;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() < 2) throw ParseError(line_no, "expected a label and at least one feature");

    CsvRow row{0, {}, line_no};
    const auto& lab = fields[0];
    auto [lp, lec] = std::from_chars(lab.data(), lab.data() + lab.size(), row.label);
    if (lec != std::errc() || lp != lab.data() + lab.size()) {
      throw ParseError(line_no, "label '" + lab + "' is not an integer");
    }
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto& f = fields[i];
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(f, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (f.empty() || used != f.size() || !std::isfinite(v)) {
        throw ParseError(line_no, "feature " + std::to_string(i) + " '" + f + "' is not a number");
      }
      row.features.push_back(v);
    }
    if (dim == 0) dim = row.features.size();
    if (row.features.size() != dim) {
      throw ParseError(line_no, "expected " + std::to_string(dim) + " features, found " +
                                    std::to_string(row.features.size()));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

StreamBundle load_csv_stream(const std::filesystem::path& path,
                             const std::vector<std::vector<long>>& task_spec,
                             const CsvStreamOptions& options) {
  if (task_spec.empty()) throw SchemaError("task spec lists no tasks");
  std::map<long, std::pair<ClassId, int>> label_map;  // raw label -> (class id, task)
  std::vector<long> class_labels;
  for (std::size_t t = 0; t < task_spec.size(); ++t) {
    if (task_spec[t].empty()) throw SchemaError("task " + std::to_string(t) + " has no classes");
    for (long raw : task_spec[t]) {
      if (label_map.count(raw)) {
        throw SchemaError("label " + std::to_string(raw) + " appears in more than one task");
      }
      label_map[raw] = {static_cast<ClassId>(class_labels.size()), static_cast<int>(t)};
      class_labels.push_back(raw);
    }
  }

  auto to_samples = [&](const std::vector<CsvRow>& rows, std::uint64_t id_base) {
    std::vector<Sample> out;
    out.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto it = label_map.find(rows[i].label);
      if (it == label_map.end()) {
        throw SchemaError("line " + std::to_string(rows[i].line) + ": label " +
                          std::to_string(rows[i].label) + " is not in the task spec");
      }
      out.push_back({rows[i].features, it->second.first, it->second.second, id_base + i});
    }
    return out;
  };

  auto train_rows = read_csv_rows(path, options.header);
  std::vector<Sample> train_all = to_samples(train_rows, 0);
  std::vector<Sample> test_all;
  if (options.test_path) {
    test_all = to_samples(read_csv_rows(*options.test_path, options.header), train_all.size());
  } else {
    std::map<ClassId, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < train_all.size(); ++i) by_class[train_all[i].label].push_back(i);
    std::vector<bool> held_out(train_all.size(), false);
    for (const auto& [c, idx] : by_class) {
      const std::size_t n_test = idx.size() / 5;
      for (std::size_t k = idx.size() - n_test; k < idx.size(); ++k) held_out[idx[k]] = true;
    }
    std::vector<Sample> kept;
    for (std::size_t i = 0; i < train_all.size(); ++i) {
      (held_out[i] ? test_all : kept).push_back(std::move(train_all[i]));
    }
    train_all = std::move(kept);
  }
  if (train_all.empty()) throw SchemaError("no training rows in " + path.string());

  const std::size_t dim = train_all.front().features.size();
  for (const auto& s : test_all) {
    if (s.features.size() != dim) throw SchemaError("test rows have a different dimension");
  }
  std::vector<double> mean(dim, 0.0);
  std::vector<double> stddev(dim, 0.0);
  for (const auto& s : train_all) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += s.features[d];
  }
  for (double& m : mean) m /= static_cast<double>(train_all.size());
  for (const auto& s : train_all) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = s.features[d] - mean[d];
      stddev[d] += diff * diff;
    }
  }
  for (double& v : stddev) v = std::sqrt(v / static_cast<double>(train_all.size()));
  auto standardize = [&](std::vector<Sample>& samples) {
    for (auto& s : samples) {
      for (std::size_t d = 0; d < dim; ++d) {
        // A constant column maps to zero rather than dividing by zero.
        s.features[d] = stddev[d] > 1e-12 ? (s.features[d] - mean[d]) / stddev[d] : 0.0;
      }
    }
  };
  standardize(train_all);
  standardize(test_all);

  std::vector<TaskDataset> train(task_spec.size());
  std::vector<TaskDataset> test(task_spec.size());
  for (std::size_t t = 0; t < task_spec.size(); ++t) {
    train[t].task = test[t].task = static_cast<int>(t);
    for (long raw : task_spec[t]) {
      train[t].classes.push_back(label_map[raw].first);
      test[t].classes.push_back(label_map[raw].first);
    }
  }
  for (auto& s : train_all) train[static_cast<std::size_t>(s.task)].samples.push_back(std::move(s));
  for (auto& s : test_all) test[static_cast<std::size_t>(s.task)].samples.push_back(std::move(s));

  return {TaskStream(std::move(train), options.batch_size, options.seed), std::move(test),
          std::move(class_labels)};
}

std::vector<double> perturb(std::span<const double> features, std::span<const double> noise,
                            std::span<const double> mask) {
  if (noise.size() != features.size() || mask.size() != features.size()) {
    throw ShapeError("perturbation size does not match the feature vector");
  }
  std::vector<double> out(features.size());
  for (std::size_t i = 0; i < features.size(); ++i) out[i] = mask[i] * (features[i] + noise[i]);
  return out;
}

std::vector<double> augment_features(std::span<const double> features, const AugmentConfig& cfg,
                                     Rng& rng) {
  std::vector<double> noise(features.size(), 0.0);
  std::vector<double> mask(features.size(), 1.0);
  if (cfg.jitter_sigma > 0.0) {
    for (double& e : noise) e = sample_normal(rng, 0.0, cfg.jitter_sigma);
  }
  if (cfg.mask_prob > 0.0) {
    for (double& m : mask) m = sample_uniform01(rng) < cfg.mask_prob ? 0.0 : 1.0;
  }
  return perturb(features, noise, mask);
}

Sample augment(const Sample& x, const AugmentConfig& cfg, Rng& rng) {
  Sample out = x;
  out.features = augment_features(x.features, cfg, rng);
  return out;
}

Tensor2 features_matrix(std::span<const Sample> samples) {
  if (samples.empty()) return {};
  const std::size_t dim = samples.front().features.size();
  Tensor2 out(samples.size(), dim);
  for (std::size_t r = 0; r < samples.size(); ++r) {
    if (samples[r].features.size() != dim) throw ShapeError("ragged sample features");
    std::copy(samples[r].features.begin(), samples[r].features.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace onpro
