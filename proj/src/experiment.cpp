#include "onpro/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "onpro/errors.hpp"

namespace onpro {

using nlohmann::json;

namespace {

json default_config() {
  return json{
      {"schema_version", kConfigSchemaVersion},
      {"stream",
       {{"kind", "synthetic"},
        {"num_tasks", 5},
        {"classes_per_task", 2},
        {"samples_per_class", 500},
        {"dim", 20},
        {"class_separation", 4.0},
        {"data_seed", nullptr},
        {"path", nullptr},
        {"test_path", nullptr},
        {"header", false},
        {"tasks", nullptr}}},
      {"method",
       {{"name", "onpro"},
        {"use_ope_new", true},
        {"use_ope_seen", true},
        {"use_apf", true},
        {"use_ins", true},
        {"seen_excludes_new", false},
        {"batch_size", 10},
        {"replay_batch_size", 64},
        {"memory_size", 100},
        {"tau", 0.5},
        {"tau_prime", 0.07},
        {"alpha", 0.25},
        {"mixup_concentration", 1.0},
        {"optimizer", nullptr},
        {"learning_rate", nullptr},
        {"weight_decay", nullptr},
        {"beta1", 0.9},
        {"beta2", 0.999},
        {"epsilon", 1e-8},
        {"hidden", {64, 64}},
        {"augment", {{"jitter_sigma", 0.1}, {"mask_prob", 0.1}}}}},
      {"diagnostics", {{"loss_series", true}, {"similarity_probe", true}, {"eval_every", 0}}},
      {"seeds", {0}},
      {"output", "report.jsonl"},
      {"checkpoint_dir", nullptr},
      {"jobs", 1},
  };
}

/// Resolves error locations against the raw config text.
class Locator {
 public:
  Locator(std::string source, std::string text) : source_(std::move(source)), text_(std::move(text)) {}

  std::size_t line_of(const std::string& dotted) const {
    std::size_t pos = 0;
    std::stringstream ss(dotted);
    std::string part;
    bool found = false;
    while (std::getline(ss, part, '.')) {
      const auto p = text_.find("\"" + part + "\"", pos);
      if (p == std::string::npos) break;
      pos = p;
      found = true;
    }
    if (!found) return 0;
    return static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(pos), '\n')) + 1;
  }

  std::size_t line_of_offset(std::size_t byte) const {
    byte = std::min(byte, text_.size());
    return static_cast<std::size_t>(std::count(text_.begin(), text_.begin() + static_cast<std::ptrdiff_t>(byte), '\n')) + 1;
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    if (overridden_.count(key)) {
      throw ConfigError(source_ + ": --override " + key + ": " + what);
    }
    const std::size_t line = line_of(key);
    throw ConfigError(source_ + ":" + (line ? std::to_string(line) + ":" : std::string()) + " " +
                      key + ": " + what);
  }

  void mark_overridden(const std::string& key) { overridden_.insert(key); }
  const std::string& source() const { return source_; }

 private:
  std::string source_;
  std::string text_;
  std::set<std::string> overridden_;
};

json::json_pointer pointer_of(const std::string& dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) p += "/" + part;
  return json::json_pointer(p);
}

/// Overlays `user` onto `base`, rejecting keys the defaults do not know.
void merge_known(json& base, const json& user, const std::string& prefix, const Locator& loc) {
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) loc.fail(key, "unknown key");
    json& slot = base[it.key()];
    if (slot.is_object() && it.value().is_object()) {
      merge_known(slot, it.value(), key, loc);
    } else {
      slot = it.value();
    }
  }
}

class Reader {
 public:
  Reader(const json& doc, const Locator& loc) : doc_(doc), loc_(loc) {}

  const json& at(const std::string& key) const { return doc_.at(pointer_of(key)); }

  bool boolean(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_boolean()) loc_.fail(key, "expected true or false");
    return v.get<bool>();
  }

  double number(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number()) loc_.fail(key, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) loc_.fail(key, "expected a finite number");
    return d;
  }

  std::uint64_t count(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && v.get<long long>() < 0)) {
      loc_.fail(key, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }

  std::string string(const std::string& key) const {
    const json& v = at(key);
    if (!v.is_string()) loc_.fail(key, "expected a string");
    return v.get<std::string>();
  }

  bool is_null(const std::string& key) const { return at(key).is_null(); }

  void require(bool ok, const std::string& key, const std::string& what) const {
    if (!ok) loc_.fail(key, what);
  }

 private:
  const json& doc_;
  const Locator& loc_;
};

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source_name,
                                         const std::vector<std::string>& overrides,
                                         const std::filesystem::path& base_dir) {
  Locator loc(source_name, text);
  json user;
  try {
    user = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source_name + ":" + std::to_string(loc.line_of_offset(e.byte)) +
                      ": invalid JSON: " + e.what());
  }
  if (!user.is_object()) throw ConfigError(source_name + ":1: config must be a JSON object");

  json doc = default_config();
  merge_known(doc, user, "", loc);

  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError(source_name + ": --override '" + ov + "' is not key=value");
    }
    const std::string key = ov.substr(0, eq);
    const std::string raw = ov.substr(eq + 1);
    loc.mark_overridden(key);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    const auto ptr = pointer_of(key);
    if (!doc.contains(ptr)) loc.fail(key, "unknown key");
    doc[ptr] = value;
  }

  Reader r(doc, loc);
  ExperimentConfig cfg;
  r.require(r.count("schema_version") == kConfigSchemaVersion, "schema_version",
            "unsupported schema version (expected " + std::to_string(kConfigSchemaVersion) + ")");

  // stream
  const std::string kind = r.string("stream.kind");
  if (kind == "synthetic") {
    cfg.stream.kind = StreamSpec::Kind::Synthetic;
    auto& s = cfg.stream.synthetic;
    s.num_tasks = r.count("stream.num_tasks");
    s.classes_per_task = r.count("stream.classes_per_task");
    s.samples_per_class = r.count("stream.samples_per_class");
    s.dim = r.count("stream.dim");
    s.class_separation = r.number("stream.class_separation");
    r.require(s.num_tasks >= 1, "stream.num_tasks", "must be >= 1");
    r.require(s.classes_per_task >= 1, "stream.classes_per_task", "must be >= 1");
    r.require(s.samples_per_class >= 5, "stream.samples_per_class",
              "must be >= 5 so every class has a test sample");
    r.require(s.dim >= s.num_tasks * s.classes_per_task, "stream.dim",
              "must be at least the total number of classes");
    r.require(s.class_separation > 0.0, "stream.class_separation", "must be > 0");
    if (!r.is_null("stream.data_seed")) cfg.stream.data_seed = r.count("stream.data_seed");
  } else if (kind == "csv") {
    cfg.stream.kind = StreamSpec::Kind::Csv;
    r.require(!r.is_null("stream.path"), "stream.path", "csv streams need a path");
    auto resolve = [&](const std::string& p) {
      std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    cfg.stream.csv_path = resolve(r.string("stream.path"));
    r.require(std::filesystem::exists(cfg.stream.csv_path), "stream.path",
              "file " + cfg.stream.csv_path.string() + " does not exist");
    if (!r.is_null("stream.test_path")) {
      cfg.stream.csv_test_path = resolve(r.string("stream.test_path"));
      r.require(std::filesystem::exists(*cfg.stream.csv_test_path), "stream.test_path",
                "file " + cfg.stream.csv_test_path->string() + " does not exist");
    }
    cfg.stream.csv_header = r.boolean("stream.header");
    const json& tasks = r.at("stream.tasks");
    r.require(tasks.is_array() && !tasks.empty(), "stream.tasks",
              "expected a non-empty list of label lists");
    for (const auto& t : tasks) {
      r.require(t.is_array() && !t.empty(), "stream.tasks", "each task must list its labels");
      std::vector<long> labels;
      for (const auto& l : t) {
        r.require(l.is_number_integer(), "stream.tasks", "labels must be integers");
        labels.push_back(l.get<long>());
      }
      cfg.stream.csv_tasks.push_back(std::move(labels));
    }
  } else {
    loc.fail("stream.kind", "expected \"synthetic\" or \"csv\"");
  }

  // method
  auto& m = cfg.method;
  try {
    m.method = parse_method(r.string("method.name"));
  } catch (const ConfigError& e) {
    loc.fail("method.name", e.what());
  }
  m.use_ope_new = r.boolean("method.use_ope_new");
  m.use_ope_seen = r.boolean("method.use_ope_seen");
  m.use_apf = r.boolean("method.use_apf");
  m.use_ins = r.boolean("method.use_ins");
  m.seen_excludes_new = r.boolean("method.seen_excludes_new");
  m.batch_size = r.count("method.batch_size");
  m.replay_batch_size = r.count("method.replay_batch_size");
  m.memory_size = r.count("method.memory_size");
  m.tau = r.number("method.tau");
  m.tau_prime = r.number("method.tau_prime");
  m.alpha = r.number("method.alpha");
  m.mixup_concentration = r.number("method.mixup_concentration");
  // Unset optimizer settings follow the method's own defaults.
  const MethodConfig base = paper_defaults(m.method);
  m.optimizer = base.optimizer;
  if (!r.is_null("method.optimizer")) {
    try {
      m.optimizer = parse_optimizer(r.string("method.optimizer"));
    } catch (const ConfigError& e) {
      loc.fail("method.optimizer", e.what());
    }
  }
  m.learning_rate = r.is_null("method.learning_rate") ? base.learning_rate
                                                      : r.number("method.learning_rate");
  m.weight_decay = r.is_null("method.weight_decay") ? base.weight_decay
                                                    : r.number("method.weight_decay");
  m.beta1 = r.number("method.beta1");
  m.beta2 = r.number("method.beta2");
  m.epsilon = r.number("method.epsilon");
  m.augment.jitter_sigma = r.number("method.augment.jitter_sigma");
  m.augment.mask_prob = r.number("method.augment.mask_prob");
  const json& hidden = r.at("method.hidden");
  r.require(hidden.is_array() && !hidden.empty(), "method.hidden",
            "expected a non-empty list of layer widths");
  m.hidden.clear();
  for (const auto& h : hidden) {
    r.require(h.is_number_integer() && h.get<long long>() > 0, "method.hidden",
              "layer widths must be positive integers");
    m.hidden.push_back(h.get<std::size_t>());
  }
  r.require(m.batch_size >= 1, "method.batch_size", "must be >= 1");
  r.require(m.replay_batch_size >= 1, "method.replay_batch_size", "must be >= 1");
  r.require(m.tau > 0.0, "method.tau", "must be > 0");
  r.require(m.tau_prime > 0.0, "method.tau_prime", "must be > 0");
  r.require(m.alpha >= 0.0 && m.alpha <= 1.0, "method.alpha", "must lie in [0, 1]");
  r.require(m.mixup_concentration > 0.0, "method.mixup_concentration", "must be > 0");
  r.require(m.learning_rate > 0.0, "method.learning_rate", "must be > 0");
  r.require(m.weight_decay >= 0.0, "method.weight_decay", "must be >= 0");
  r.require(m.beta1 >= 0.0 && m.beta1 < 1.0, "method.beta1", "must lie in [0, 1)");
  r.require(m.beta2 >= 0.0 && m.beta2 < 1.0, "method.beta2", "must lie in [0, 1)");
  r.require(m.epsilon > 0.0, "method.epsilon", "must be > 0");
  r.require(m.augment.jitter_sigma >= 0.0, "method.augment.jitter_sigma", "must be >= 0");
  r.require(m.augment.mask_prob >= 0.0 && m.augment.mask_prob < 1.0, "method.augment.mask_prob",
            "must lie in [0, 1)");
  m.validate();

  cfg.diagnostics.loss_series = r.boolean("diagnostics.loss_series");
  cfg.diagnostics.similarity_probe = r.boolean("diagnostics.similarity_probe");
  cfg.diagnostics.eval_every = r.count("diagnostics.eval_every");

  const json& seeds = r.at("seeds");
  r.require(seeds.is_array() && !seeds.empty(), "seeds", "expected a non-empty list of integers");
  for (const auto& s : seeds) {
    r.require(s.is_number_unsigned() || (s.is_number_integer() && s.get<long long>() >= 0), "seeds",
              "seeds must be non-negative integers");
    cfg.seeds.push_back(s.get<std::uint64_t>());
  }
  cfg.output = r.string("output");
  r.require(!cfg.output.empty(), "output", "must not be empty");
  if (!r.is_null("checkpoint_dir")) cfg.checkpoint_dir = r.string("checkpoint_dir");
  cfg.jobs = r.count("jobs");
  r.require(cfg.jobs >= 1, "jobs", "must be >= 1");

  doc["method"]["optimizer"] = optimizer_name(m.optimizer);
  doc["method"]["learning_rate"] = m.learning_rate;
  doc["method"]["weight_decay"] = m.weight_decay;
  cfg.document = std::move(doc);
  return cfg;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str(), path.string(), overrides, path.parent_path());
}

StreamBundle build_stream(const StreamSpec& spec, std::size_t batch_size, std::uint64_t run_seed) {
  if (spec.kind == StreamSpec::Kind::Synthetic) {
    SyntheticStreamConfig cfg = spec.synthetic;
    cfg.batch_size = batch_size;
    cfg.seed = spec.data_seed.value_or(run_seed);
    StreamBundle bundle = make_synthetic_stream(cfg);
    if (spec.data_seed) {
      // Fixed data, per-run arrival order.
      bundle.stream = TaskStream(bundle.stream.tasks(), batch_size, run_seed);
    }
    return bundle;
  }
  CsvStreamOptions options;
  options.batch_size = batch_size;
  options.header = spec.csv_header;
  options.seed = run_seed;
  options.test_path = spec.csv_test_path;
  return load_csv_stream(spec.csv_path, spec.csv_tasks, options);
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return a;
}

SeedReport run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  StreamBundle bundle = build_stream(config.stream, config.method.batch_size, seed);
  RunResult run = run_stream(std::move(bundle.stream), bundle.test_sets, config.method, seed,
                             config.diagnostics);
  SeedReport rep;
  rep.seed = seed;
  rep.accuracy = run.accuracy;
  rep.average_accuracy = average_accuracy(run.accuracy);
  if (run.accuracy.num_tasks() >= 2) rep.average_forgetting = average_forgetting(run.accuracy);
  rep.samples_consumed = run.samples_consumed;
  rep.loss_series = std::move(run.steps);
  rep.similarity = std::move(run.similarity);
  rep.evals = std::move(run.evals);
  if (config.checkpoint_dir) {
    std::filesystem::create_directories(*config.checkpoint_dir);
    const auto path = *config.checkpoint_dir / (std::string(method_name(config.method.method)) +
                                                "_seed" + std::to_string(seed) + ".ckpt");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    save_checkpoint(run.model, out);
  }
  return rep;
}

namespace {

void summarize(RunReport& report) {
  std::vector<double> acc, fgt;
  for (const auto& s : report.seeds) {
    acc.push_back(s.average_accuracy);
    if (s.average_forgetting) fgt.push_back(*s.average_forgetting);
  }
  report.average_accuracy = aggregate(acc);
  report.average_forgetting.reset();
  if (!fgt.empty() && fgt.size() == report.seeds.size()) report.average_forgetting = aggregate(fgt);
}

}  // namespace

RunReport build_report(const ExperimentConfig& config) {
  RunReport report;
  report.method = method_name(config.method.method);
  report.config = config.document;
  report.seeds.resize(config.seeds.size());

  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= config.seeds.size()) return;
      try {
        report.seeds[i] = run_seed(config, config.seeds[i]);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = config.seeds.size();
      }
    }
  };
  const std::size_t jobs = std::min(config.jobs, config.seeds.size());
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  summarize(report);
  return report;
}

RunReport run_experiment(const ExperimentConfig& config) {
  RunReport report = build_report(config);
  if (config.output.has_parent_path()) std::filesystem::create_directories(config.output.parent_path());
  std::ofstream out(config.output);
  if (!out) throw Error("cannot write report " + config.output.string());
  write_report(report, out);
  if (!out) throw Error("failed writing report " + config.output.string());
  return report;
}

// ---------------------------------------------------------------------------
// Report encoding

namespace {

json aggregate_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"std", a.stddev}, {"n", a.count}};
}

Aggregate aggregate_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()};
}

}  // namespace

json seed_record(const SeedReport& s) {
  json rec{{"record", "seed"},
           {"seed", s.seed},
           {"accuracy_matrix", s.accuracy.rows()},
           {"average_accuracy", s.average_accuracy},
           {"average_forgetting", s.average_forgetting ? json(*s.average_forgetting) : json()},
           {"samples_consumed", s.samples_consumed}};
  json losses = json::array();
  for (const auto& st : s.loss_series) {
    losses.push_back({{"step", st.step},
                      {"task", st.task},
                      {"l_ope_new", st.losses.l_ope_new},
                      {"l_ope_seen", st.losses.l_ope_seen},
                      {"l_ins", st.losses.l_ins},
                      {"l_ce", st.losses.l_ce},
                      {"total", st.losses.total},
                      {"replay_size", st.replay_size},
                      {"feedback_count", st.feedback_count}});
  }
  rec["loss_series"] = std::move(losses);
  json sims = json::array();
  for (const auto& v : s.similarity) {
    sims.push_back({{"step", v.step},
                    {"task", v.task},
                    {"class", v.cls},
                    {"similarity", v.similarity},
                    {"first_step_of_task", v.first_step_of_task},
                    {"bank_matches_batch", v.bank_matches_batch}});
  }
  rec["similarity_series"] = std::move(sims);
  json evals = json::array();
  for (const auto& e : s.evals) {
    evals.push_back({{"step", e.step}, {"task", e.task}, {"accuracy", e.accuracy}});
  }
  rec["eval_series"] = std::move(evals);
  return rec;
}

namespace {

SeedReport seed_from(const json& j) {
  SeedReport s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.accuracy = AccuracyMatrix::from_rows(j.at("accuracy_matrix").get<std::vector<std::vector<double>>>());
  s.average_accuracy = j.at("average_accuracy").get<double>();
  if (!j.at("average_forgetting").is_null()) {
    s.average_forgetting = j.at("average_forgetting").get<double>();
  }
  s.samples_consumed = j.at("samples_consumed").get<std::size_t>();
  for (const auto& e : j.at("loss_series")) {
    StepRecord st;
    st.step = e.at("step").get<std::size_t>();
    st.task = e.at("task").get<int>();
    st.losses = {e.at("l_ope_new").get<double>(), e.at("l_ope_seen").get<double>(),
                 e.at("l_ins").get<double>(), e.at("l_ce").get<double>(),
                 e.at("total").get<double>()};
    st.replay_size = e.at("replay_size").get<std::size_t>();
    st.feedback_count = e.at("feedback_count").get<std::size_t>();
    s.loss_series.push_back(st);
  }
  for (const auto& e : j.at("similarity_series")) {
    s.similarity.push_back({e.at("step").get<std::size_t>(), e.at("task").get<int>(),
                            e.at("class").get<ClassId>(), e.at("similarity").get<double>(),
                            e.at("first_step_of_task").get<bool>(),
                            e.at("bank_matches_batch").get<bool>()});
  }
  for (const auto& e : j.at("eval_series")) {
    s.evals.push_back({e.at("step").get<std::size_t>(), e.at("task").get<int>(),
                       e.at("accuracy").get<double>()});
  }
  return s;
}

bool same_losses(const LossBreakdown& a, const LossBreakdown& b) {
  return a.l_ope_new == b.l_ope_new && a.l_ope_seen == b.l_ope_seen && a.l_ins == b.l_ins &&
         a.l_ce == b.l_ce && a.total == b.total;
}

}  // namespace

bool operator==(const SeedReport& a, const SeedReport& b) {
  if (a.seed != b.seed || !(a.accuracy == b.accuracy) || a.average_accuracy != b.average_accuracy ||
      a.average_forgetting != b.average_forgetting || a.samples_consumed != b.samples_consumed ||
      a.loss_series.size() != b.loss_series.size() || a.similarity.size() != b.similarity.size() ||
      a.evals.size() != b.evals.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.loss_series.size(); ++i) {
    const auto& x = a.loss_series[i];
    const auto& y = b.loss_series[i];
    if (x.step != y.step || x.task != y.task || !same_losses(x.losses, y.losses) ||
        x.replay_size != y.replay_size || x.feedback_count != y.feedback_count) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.similarity.size(); ++i) {
    const auto& x = a.similarity[i];
    const auto& y = b.similarity[i];
    if (x.step != y.step || x.task != y.task || x.cls != y.cls || x.similarity != y.similarity ||
        x.first_step_of_task != y.first_step_of_task ||
        x.bank_matches_batch != y.bank_matches_batch) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.evals.size(); ++i) {
    const auto& x = a.evals[i];
    const auto& y = b.evals[i];
    if (x.step != y.step || x.task != y.task || x.accuracy != y.accuracy) return false;
  }
  return true;
}

bool operator==(const RunReport& a, const RunReport& b) {
  return a.schema_version == b.schema_version && a.method == b.method && a.config == b.config &&
         a.seeds == b.seeds && a.average_accuracy == b.average_accuracy &&
         a.average_forgetting == b.average_forgetting;
}

void write_report(const RunReport& report, std::ostream& out) {
  out << json{{"record", "header"},
              {"schema_version", report.schema_version},
              {"method", report.method},
              {"config", report.config}}
             .dump()
      << '\n';
  for (const auto& s : report.seeds) out << seed_record(s).dump() << '\n';
  json seeds = json::array();
  for (const auto& s : report.seeds) seeds.push_back(s.seed);
  out << json{{"record", "summary"},
              {"method", report.method},
              {"seeds", seeds},
              {"average_accuracy", aggregate_json(report.average_accuracy)},
              {"average_forgetting", report.average_forgetting
                                         ? aggregate_json(*report.average_forgetting)
                                         : json()}}
             .dump()
      << '\n';
}

RunReport read_report(std::istream& in) {
  RunReport report;
  bool have_header = false;
  bool have_summary = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json rec = json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object() || !rec.contains("record")) {
      throw ParseError(line_no, "not a report record");
    }
    try {
      const std::string kind = rec.at("record").get<std::string>();
      if (kind == "header") {
        report.schema_version = rec.at("schema_version").get<int>();
        if (report.schema_version != kReportSchemaVersion) {
          throw ParseError(line_no, "unsupported report schema " + std::to_string(report.schema_version));
        }
        report.method = rec.at("method").get<std::string>();
        report.config = rec.at("config");
        have_header = true;
      } else if (kind == "seed") {
        report.seeds.push_back(seed_from(rec));
      } else if (kind == "summary") {
        report.average_accuracy = aggregate_from(rec.at("average_accuracy"));
        if (!rec.at("average_forgetting").is_null()) {
          report.average_forgetting = aggregate_from(rec.at("average_forgetting"));
        }
        have_summary = true;
      } else {
        throw ParseError(line_no, "unknown record type '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const MetricError& e) {
      throw ParseError(line_no, e.what());
    }
  }
  if (!have_header) throw ParseError(line_no, "report has no header record");
  if (!have_summary) summarize(report);  // partial run: recompute from the seeds present
  return report;
}

RunReport read_report_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CompareError("cannot open report " + path.string());
  try {
    return read_report(in);
  } catch (const ParseError& e) {
    throw CompareError(path.string() + ": " + e.what());
  }
}

std::string compare_reports(const RunReport& a, const RunReport& b) {
  const json& sa = a.config.contains("stream") ? a.config.at("stream") : json();
  const json& sb = b.config.contains("stream") ? b.config.at("stream") : json();
  if (sa != sb) throw CompareError("reports were produced on different streams");

  auto label = [](const RunReport& r, const char* tag) {
    return std::string(tag) + " (" + r.method + ", n=" + std::to_string(r.seeds.size()) + ")";
  };
  auto cell = [](const std::optional<Aggregate>& agg) {
    if (!agg) return std::string("n/a");
    std::ostringstream os;
    os << std::fixed << std::setprecision(4) << agg->mean << " +- " << agg->stddev;
    return os.str();
  };
  auto delta = [](const std::optional<Aggregate>& x, const std::optional<Aggregate>& y) {
    if (!x || !y) return std::string("n/a");
    std::ostringstream os;
    os << std::showpos << std::fixed << std::setprecision(4) << (x->mean - y->mean);
    return os.str();
  };

  std::ostringstream os;
  os << std::left << std::setw(20) << "metric" << std::setw(26) << label(a, "A") << std::setw(26)
     << label(b, "B") << "delta (A-B)\n";
  os << std::setw(20) << "average_accuracy" << std::setw(26) << cell(a.average_accuracy)
     << std::setw(26) << cell(b.average_accuracy)
     << delta(a.average_accuracy, b.average_accuracy) << '\n';
  os << std::setw(20) << "average_forgetting" << std::setw(26) << cell(a.average_forgetting)
     << std::setw(26) << cell(b.average_forgetting)
     << delta(a.average_forgetting, b.average_forgetting) << '\n';
  return os.str();
}

}  // namespace onpro
