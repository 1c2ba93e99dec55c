#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "onpro/stream.hpp"
#include "onpro/trainer.hpp"

namespace onpro {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

struct StreamSpec {
  enum class Kind { Synthetic, Csv };
  Kind kind = Kind::Synthetic;
  SyntheticStreamConfig synthetic;
  /// Synthetic data seed; the run seed is used when unset.
  std::optional<std::uint64_t> data_seed;
  std::filesystem::path csv_path;
  std::optional<std::filesystem::path> csv_test_path;
  bool csv_header = false;
  std::vector<std::vector<long>> csv_tasks;
};

struct ExperimentConfig {
  /// The effective configuration (file plus overrides), echoed into reports.
  nlohmann::json document;
  StreamSpec stream;
  MethodConfig method;
  DiagnosticsConfig diagnostics;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output;
  std::optional<std::filesystem::path> checkpoint_dir;
  std::size_t jobs = 1;
};

/// Parses a JSON config. `overrides` are "dotted.key=value" strings; a value
/// that parses as JSON is used as such, anything else as a string. Errors are
/// ConfigError with a "<source>:<line>:" prefix when a line can be located.
ExperimentConfig parse_experiment_config(const std::string& text, const std::string& source_name,
                                         const std::vector<std::string>& overrides = {},
                                         const std::filesystem::path& base_dir = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

/// Materializes the stream for one run seed (data seed falls back to it).
StreamBundle build_stream(const StreamSpec& spec, std::size_t batch_size, std::uint64_t run_seed);

struct Aggregate {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t count = 0;

  friend bool operator==(const Aggregate&, const Aggregate&) = default;
};

Aggregate aggregate(std::span<const double> values);

struct SeedReport {
  std::uint64_t seed = 0;
  AccuracyMatrix accuracy;
  double average_accuracy = 0.0;
  std::optional<double> average_forgetting;
  std::size_t samples_consumed = 0;
  std::vector<StepRecord> loss_series;
  std::vector<SimilarityRecord> similarity;
  std::vector<EvalRecord> evals;
};

struct RunReport {
  int schema_version = kReportSchemaVersion;
  std::string method;
  nlohmann::json config;
  std::vector<SeedReport> seeds;
  Aggregate average_accuracy;
  std::optional<Aggregate> average_forgetting;
};

bool operator==(const SeedReport& a, const SeedReport& b);
bool operator==(const RunReport& a, const RunReport& b);

SeedReport run_seed(const ExperimentConfig& config, std::uint64_t seed);
/// Runs every seed (config.jobs at a time) and assembles the report. Does not
/// write anything; see run_experiment.
RunReport build_report(const ExperimentConfig& config);
/// build_report, then writes the report to config.output (and checkpoints
/// when configured).
RunReport run_experiment(const ExperimentConfig& config);

nlohmann::json seed_record(const SeedReport& seed);

/// JSON Lines: one header record, one record per seed, one summary record.
void write_report(const RunReport& report, std::ostream& out);
RunReport read_report(std::istream& in);
RunReport read_report_file(const std::filesystem::path& path);

/// Table of Average Accuracy / Average Forgetting per report with deltas
/// (a − b). CompareError when the reports describe different streams.
std::string compare_reports(const RunReport& a, const RunReport& b);

}  // namespace onpro
