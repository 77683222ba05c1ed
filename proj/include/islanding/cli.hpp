#pragma once

// Command implementations behind the `islanding` executable. Each command
// returns its results and throws on failure; main_entry maps outcomes to the
// process exit codes.

#include "islanding/detector.hpp"
#include "islanding/gridsim.hpp"
#include "islanding/pipeline.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace islanding::cli {

constexpr int kExitOk = 0;
constexpr int kExitError = 2;
constexpr int kExitNoConvergence = 3;
constexpr int kExitIslanding = 10;

enum class Format { Text, Csv };

struct RunOptions {
    std::vector<std::string> overrides;  // key=value, applied in order
    std::optional<long long> seed;
    std::optional<int> monitor_bus;
    Format format = Format::Text;
};

struct RunReport {
    std::string scenario_id;
    detector::Verdict verdict = detector::Verdict::None;
    double a75 = 0.0;
    double arcv1 = 0.0;
    double arcv2 = 0.0;
    std::optional<double> latency_cycles;
    std::optional<double> verdict_delay;
    std::string note;
    std::vector<std::filesystem::path> artifacts;
};

int verdict_exit_code(detector::Verdict v);

/// Runs one scenario and writes, into output_dir:
///   <id>.waveform.csv, <id>.rms.csv, <id>.bus_rms.csv, <id>.estimates.csv,
///   <id>.timeline.csv, <id>.events.log, <id>.powerflow.txt, <id>.report.{txt,csv}
RunReport cmd_run(const std::filesystem::path& scenario, const std::filesystem::path& output_dir, const RunOptions& opts);

/// The 16 bundled scenarios in sweep order: case 1..4, each with islanding,
/// three-phase fault, single-phase fault, load decrease.
std::vector<std::filesystem::path> sweep_scenarios(const std::filesystem::path& scenario_dir);

/// Runs every bundled scenario (on up to `jobs` threads), writes per-scenario
/// artifacts plus sweep.{txt,csv}, and prints the table to `out`. On a
/// scenario error the table of completed rows is still written before the
/// first error is rethrown.
std::vector<RunReport> cmd_sweep(const std::filesystem::path& scenario_dir, const std::filesystem::path& output_dir,
                                 const RunOptions& opts, unsigned jobs, std::ostream& out);

void write_sweep_table(std::ostream& out, const std::vector<std::optional<RunReport>>& rows, Format format);

/// Streams the estimator over a `time_s,value_pu` CSV, writing one estimates
/// row per sample. Returns the number of samples processed.
std::size_t cmd_estimate(const std::filesystem::path& waveform_csv, const std::filesystem::path& output_csv,
                         const std::optional<std::filesystem::path>& config, const std::vector<std::string>& overrides);

/// Solves the network file and prints the flow table. Throws ConvergenceError.
grid::PowerFlowResult cmd_powerflow(const std::filesystem::path& network, std::ostream& out, Format format);

/// Synthesizes a waveform from `waveform.*` keys into a CSV.
std::size_t cmd_synth(const std::filesystem::path& config, const std::vector<std::string>& overrides, double duration,
                      double ts, const std::filesystem::path& output_csv);

/// Full command-line front end (subcommands run, sweep, estimate, powerflow, synth).
int main_entry(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace islanding::cli
