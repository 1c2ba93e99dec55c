// onpro: run seeded OnPro / ER experiments and compare their reports.

#include <cstdint>
#include <exception>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "onpro/errors.hpp"
#include "onpro/experiment.hpp"

namespace {

void print_summary(const onpro::RunReport& report, const std::filesystem::path& out) {
  std::cout << report.method << ": " << report.seeds.size() << " seed(s), average accuracy "
            << report.average_accuracy.mean << " +- " << report.average_accuracy.stddev;
  if (report.average_forgetting) {
    std::cout << ", average forgetting " << report.average_forgetting->mean << " +- "
              << report.average_forgetting->stddev;
  }
  std::cout << "\nreport written to " << out.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online prototype learning for online continual learning"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::size_t seed_count = 0;
  std::string out_path;
  std::size_t jobs = 0;
  auto* run = app.add_subcommand("run", "Run every configured seed and write a JSONL report");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--override,-o", overrides, "Override a config key: dotted.key=value")
      ->allow_extra_args(false);
  run->add_option("--seed-count", seed_count, "Use seeds 0..N-1 instead of the configured list")
      ->check(CLI::PositiveNumber);
  run->add_option("--out", out_path, "Report path (overrides the config's output)");
  run->add_option("--jobs,-j", jobs, "Seeds to run in parallel")->check(CLI::PositiveNumber);

  std::string report_a;
  std::string report_b;
  auto* compare = app.add_subcommand("compare", "Tabulate metric deltas between two reports");
  compare->add_option("report_a", report_a, "First report")->required();
  compare->add_option("report_b", report_b, "Second report")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      if (seed_count > 0) {
        std::vector<std::uint64_t> seeds(seed_count);
        std::iota(seeds.begin(), seeds.end(), std::uint64_t{0});
        overrides.push_back("seeds=" + nlohmann::json(seeds).dump());
      }
      if (!out_path.empty()) overrides.push_back("output=" + nlohmann::json(out_path).dump());
      if (jobs > 0) overrides.push_back("jobs=" + std::to_string(jobs));
      const onpro::ExperimentConfig config = onpro::load_experiment_config(config_path, overrides);
      const onpro::RunReport report = onpro::run_experiment(config);
      print_summary(report, config.output);
      return 0;
    }
    const onpro::RunReport a = onpro::read_report_file(report_a);
    const onpro::RunReport b = onpro::read_report_file(report_b);
    std::cout << onpro::compare_reports(a, b);
    return 0;
  } catch (const onpro::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
