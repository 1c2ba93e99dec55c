#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "onpro/errors.hpp"
#include "onpro/experiment.hpp"

using namespace onpro;
using nlohmann::json;

namespace {

const std::filesystem::path kData = ONPRO_TEST_DATA_DIR;

// Tiny synthetic stream so whole runs take well under a second.
const char* kTinyConfig = R"({
  "schema_version": 1,
  "stream": {"kind": "synthetic", "num_tasks": 2, "classes_per_task": 2,
             "samples_per_class": 20, "dim": 6, "class_separation": 4.0},
  "method": {"name": "onpro", "batch_size": 5, "replay_batch_size": 8,
             "memory_size": 20, "hidden": [12, 12]},
  "seeds": [0, 1, 2],
  "output": "out.jsonl"
})";

std::string error_of(const std::string& text, const std::vector<std::string>& overrides = {}) {
  try {
    parse_experiment_config(text, "cfg.json", overrides);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("onpro_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

double sample_sd(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("defaults fill everything the file leaves out") {
  const auto cfg = parse_experiment_config(R"({"schema_version": 1})", "min.json");
  CHECK(cfg.stream.kind == StreamSpec::Kind::Synthetic);
  CHECK(cfg.stream.synthetic.num_tasks == 5);
  CHECK(cfg.stream.synthetic.dim == 20);
  CHECK(cfg.method.method == Method::OnPro);
  CHECK(cfg.method.batch_size == 10);
  CHECK(cfg.method.replay_batch_size == 64);
  CHECK(cfg.method.memory_size == 100);
  CHECK(cfg.method.tau == 0.5);
  CHECK(cfg.method.tau_prime == 0.07);
  CHECK(cfg.method.alpha == 0.25);
  CHECK(cfg.method.optimizer == Optimizer::Adam);
  CHECK(cfg.method.learning_rate == 5e-4);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{0});
  CHECK(cfg.document["method"]["optimizer"] == "adam");
}

TEST_CASE("optimizer settings follow the method unless given") {
  const auto er = parse_experiment_config(R"({"schema_version": 1, "method": {"name": "er"}})", "er.json");
  CHECK(er.method.optimizer == Optimizer::Sgd);
  CHECK(er.method.learning_rate == 0.1);
  CHECK(er.method.weight_decay == 0.0);
  CHECK(er.document["method"]["learning_rate"] == 0.1);

  const auto pinned = parse_experiment_config(
      R"({"schema_version": 1, "method": {"name": "er", "optimizer": "adam", "learning_rate": 0.002}})",
      "er.json");
  CHECK(pinned.method.optimizer == Optimizer::Adam);
  CHECK(pinned.method.learning_rate == 0.002);

  CHECK(error_of(R"({"schema_version": 1,
  "method": {"optimizer": "lbfgs"}})").rfind("cfg.json:2: method.optimizer:", 0) == 0);
}

TEST_CASE("errors name the file, line and key") {
  std::ifstream in(kData / "bad_config.json");
  std::stringstream text;
  text << in.rdbuf();
  const std::string msg = error_of(text.str());
  CHECK(msg == "cfg.json:5: method.tau: must be > 0");

  CHECK(error_of("{\n  \"schema_version\": 1,\n  \"mehtod\": {}\n}").rfind("cfg.json:3: mehtod: unknown key", 0) == 0);
  CHECK(error_of("{\n  \"schema_version\": 1,\n  \"method\": {\"batch_size\": \"ten\"}\n}")
            .rfind("cfg.json:3: method.batch_size:", 0) == 0);
  CHECK(error_of("{\n  \"schema_version\": 2\n}").rfind("cfg.json:2: schema_version:", 0) == 0);
  CHECK(error_of("{\n  \"schema_version\": 1,\n  \"seeds\": [0, \n").rfind("cfg.json:", 0) == 0);
  CHECK(error_of("[1, 2]") == "cfg.json:1: config must be a JSON object");
  CHECK(error_of(R"({"schema_version": 1, "stream": {"num_tasks": 30}})").find("stream.dim") !=
        std::string::npos);
}

TEST_CASE("overrides replace keys and are reported as overrides") {
  const auto cfg = parse_experiment_config(
      kTinyConfig, "tiny.json",
      {"method.tau=0.25", "method.name=\"er\"", "seeds=[4, 5]", "output=elsewhere.jsonl",
       "stream.class_separation=3"});
  CHECK(cfg.method.tau == 0.25);
  CHECK(cfg.method.method == Method::ER);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(cfg.output == "elsewhere.jsonl");
  CHECK(cfg.stream.synthetic.class_separation == 3.0);
  CHECK(cfg.document["method"]["tau"] == 0.25);

  // A bare word that is not JSON is taken as a string.
  CHECK(parse_experiment_config(kTinyConfig, "tiny.json", {"method.name=er"}).method.method == Method::ER);

  CHECK(error_of(kTinyConfig, {"method.tau=-1"}) == "cfg.json: --override method.tau: must be > 0");
  CHECK(error_of(kTinyConfig, {"method.nope=1"}) == "cfg.json: --override method.nope: unknown key");
  CHECK(error_of(kTinyConfig, {"novalue"}).find("not key=value") != std::string::npos);
}

TEST_CASE("csv streams resolve paths against the config directory") {
  const auto dir = scratch_dir("csv_cfg");
  std::filesystem::copy_file(kData / "four_class.csv", dir / "four_class.csv");
  {
    std::ofstream out(dir / "csv.json");
    out << R"({"schema_version": 1,
      "stream": {"kind": "csv", "path": "four_class.csv", "header": true, "tasks": [[10, 20], [30, 40]]},
      "method": {"batch_size": 4, "replay_batch_size": 8, "memory_size": 12, "hidden": [8]},
      "diagnostics": {"loss_series": false, "similarity_probe": false}})";
  }
  const auto cfg = load_experiment_config(dir / "csv.json");
  CHECK(cfg.stream.kind == StreamSpec::Kind::Csv);
  CHECK(cfg.stream.csv_path == dir / "four_class.csv");
  CHECK(cfg.stream.csv_tasks == std::vector<std::vector<long>>{{10, 20}, {30, 40}});
  const auto seed = run_seed(cfg, 0);
  CHECK(seed.accuracy.num_tasks() == 2);

  std::ofstream(dir / "missing.json") << R"({"schema_version": 1, "stream": {"kind": "csv", "path": "nope.csv", "tasks": [[1]]}})";
  CHECK_THROWS_AS(load_experiment_config(dir / "missing.json"), ConfigError);
  CHECK_THROWS_AS(load_experiment_config(dir / "absent.json"), ConfigError);
}

TEST_CASE("aggregate uses the sample standard deviation") {
  const std::vector<double> v{0.5, 0.7, 0.6, 0.9};
  const auto a = aggregate(v);
  CHECK(a.count == 4);
  CHECK(a.mean == doctest::Approx(0.675).epsilon(1e-15));
  CHECK(a.stddev == doctest::Approx(sample_sd(v)).epsilon(1e-14));
  const std::vector<double> one{0.3};
  CHECK(aggregate(one).stddev == 0.0);
  CHECK(aggregate(one).mean == 0.3);
}

TEST_CASE("reports round-trip and their summaries match the seeds") {
  const auto cfg = parse_experiment_config(kTinyConfig, "tiny.json", {"diagnostics.eval_every=3"});
  const RunReport report = build_report(cfg);
  REQUIRE(report.seeds.size() == 3);
  CHECK(report.method == "onpro");

  std::vector<double> acc, fgt;
  for (const auto& s : report.seeds) {
    CHECK(s.average_accuracy == average_accuracy(s.accuracy));
    CHECK(*s.average_forgetting == average_forgetting(s.accuracy));
    acc.push_back(s.average_accuracy);
    fgt.push_back(*s.average_forgetting);
  }
  CHECK(report.average_accuracy == aggregate(acc));
  CHECK(*report.average_forgetting == aggregate(fgt));

  std::stringstream buf;
  write_report(report, buf);
  const RunReport back = read_report(buf);
  CHECK(back == report);

  // Lines: header, one per seed, summary.
  std::stringstream again;
  write_report(back, again);
  CHECK(again.str() == [&] {
    std::stringstream s;
    write_report(report, s);
    return s.str();
  }());
  std::size_t lines = 0;
  for (char c : again.str()) lines += c == '\n';
  CHECK(lines == 5);
}

TEST_CASE("a single-seed report has zero spread") {
  const auto cfg = parse_experiment_config(kTinyConfig, "tiny.json", {"seeds=[3]"});
  const auto report = build_report(cfg);
  CHECK(report.average_accuracy.stddev == 0.0);
  CHECK(report.average_accuracy.count == 1);
}

TEST_CASE("parallel seeds give the same report as sequential ones") {
  const auto seq = build_report(parse_experiment_config(kTinyConfig, "tiny.json"));
  const auto par = build_report(parse_experiment_config(kTinyConfig, "tiny.json", {"jobs=3"}));
  REQUIRE(seq.seeds.size() == par.seeds.size());
  for (std::size_t i = 0; i < seq.seeds.size(); ++i) CHECK(seq.seeds[i] == par.seeds[i]);
  CHECK(seq.average_accuracy == par.average_accuracy);
}

TEST_CASE("a report without its summary is still readable") {
  const auto report = build_report(parse_experiment_config(kTinyConfig, "tiny.json", {"seeds=[0, 1]"}));
  std::stringstream buf;
  write_report(report, buf);
  std::string text = buf.str();
  text.erase(text.rfind('\n', text.size() - 2) + 1);  // drop the summary line
  std::stringstream partial(text);
  const auto back = read_report(partial);
  CHECK(back.seeds.size() == 2);
  CHECK(back.average_accuracy == report.average_accuracy);
}

TEST_CASE("malformed reports raise ParseError with the line") {
  auto line_of = [](const std::string& text) -> std::size_t {
    std::stringstream in(text);
    try {
      read_report(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  const std::string header = R"({"record":"header","schema_version":1,"method":"onpro","config":{}})";
  CHECK(line_of(header + "\nnot json\n") == 2);
  CHECK(line_of(header + "\n{\"record\":\"mystery\"}\n") == 2);
  CHECK(line_of(R"({"record":"header","schema_version":9,"method":"onpro","config":{}})") == 1);
  std::stringstream empty;
  CHECK_THROWS_AS(read_report(empty), ParseError);
}

TEST_CASE("run_experiment writes the report and checkpoints") {
  const auto dir = scratch_dir("run");
  const auto cfg = parse_experiment_config(
      kTinyConfig, "tiny.json",
      {"seeds=[0, 1]", "output=\"" + (dir / "r.jsonl").string() + "\"",
       "checkpoint_dir=\"" + (dir / "ckpt").string() + "\""});
  const auto report = run_experiment(cfg);
  CHECK(read_report_file(dir / "r.jsonl") == report);
  CHECK(std::filesystem::exists(dir / "ckpt" / "onpro_seed0.ckpt"));
  CHECK(std::filesystem::exists(dir / "ckpt" / "onpro_seed1.ckpt"));
}

TEST_CASE("compare tabulates deltas and guards against mismatched streams") {
  const auto a = build_report(parse_experiment_config(kTinyConfig, "tiny.json", {"seeds=[0, 1]"}));
  const auto b = build_report(
      parse_experiment_config(kTinyConfig, "tiny.json", {"seeds=[0, 1]", "method.name=\"er\""}));

  const std::string same = compare_reports(a, a);
  CHECK(same.find("average_accuracy") != std::string::npos);
  CHECK(same.find("+0.0000") != std::string::npos);
  CHECK(same.find("-0.0000") == std::string::npos);

  const std::string table = compare_reports(a, b);
  std::ostringstream want;
  want << std::showpos << std::fixed;
  want.precision(4);
  want << a.average_accuracy.mean - b.average_accuracy.mean;
  CHECK(table.find(want.str()) != std::string::npos);
  CHECK(table.find("onpro") != std::string::npos);
  CHECK(table.find("er, n=2") != std::string::npos);

  const auto c = build_report(parse_experiment_config(
      kTinyConfig, "tiny.json", {"seeds=[0]", "stream.class_separation=6"}));
  CHECK_THROWS_AS(compare_reports(a, c), CompareError);
  CHECK_THROWS_AS(read_report_file("/nonexistent/report.jsonl"), CompareError);
}

TEST_CASE("data seed pins the stream across run seeds") {
  const auto cfg = parse_experiment_config(kTinyConfig, "tiny.json", {"stream.data_seed=9"});
  auto a = build_stream(cfg.stream, 5, 0);
  auto b = build_stream(cfg.stream, 5, 1);
  CHECK(a.test_sets[0].samples == b.test_sets[0].samples);
  const auto unpinned = parse_experiment_config(kTinyConfig, "tiny.json");
  auto c = build_stream(unpinned.stream, 5, 0);
  auto d = build_stream(unpinned.stream, 5, 1);
  CHECK_FALSE(c.test_sets[0].samples == d.test_sets[0].samples);
}
