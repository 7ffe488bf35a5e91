#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "vespa/config.hpp"
#include "vespa/mcsim.hpp"
#include "vespa/trace.hpp"

namespace vespa {

/// Everything needed to build and drive one machine.
struct RunConfig {
    std::string run_id = "run";
    MachineConfig machine;
    std::string trace_path;  // empty: use `generator`
    GeneratorSpec generator;
    std::string output_csv;
    bool baseline_companion = false;
    unsigned sweep_workers = 0;

    [[nodiscard]] std::unique_ptr<RecordSource> open_source() const;
};

/// Validates every field (geometry first); errors name the offending key.
RunConfig build_run_config(const Config& config);

struct RunResult {
    std::string run_id;
    std::string geometry;
    std::string policy;
    double superpage_probability = 0.0;
    unsigned latency_base_cycles = 0;
    unsigned latency_super_cycles = 0;
    std::vector<MetricsAccumulator> per_core;
    MetricsAccumulator total;
    /// Same trace and allocator on the baseline VIPT cache.
    std::optional<std::vector<MetricsAccumulator>> baseline_per_core;
    std::optional<MetricsAccumulator> baseline_total;
    MachineStats stats;
    CoherenceEnergyReport coherence;
};

/// The same configuration on a baseline VIPT cache.
RunConfig baseline_counterpart(const RunConfig& config);

RunResult run_experiment(const RunConfig& config);

enum class SweepAxis : std::uint8_t { Probability, Geometry, Policy };

SweepAxis parse_sweep_axis(const std::string& name);
const char* to_string(SweepAxis axis);

/// One run per value, each paired with its baseline counterpart; points run
/// on a bounded worker pool and come back in value order. A failing point
/// aborts the sweep with a ConfigError or std::runtime_error naming it.
std::vector<RunResult> sweep(const Config& base, SweepAxis axis, const std::vector<std::string>& values,
                             unsigned workers = 0);

void write_csv_header(std::ostream& out);
/// One row per core plus a row with core = "all".
void write_csv_rows(std::ostream& out, const RunResult& result);
void write_csv(std::ostream& out, const std::vector<RunResult>& results);

/// Writes gnuplot-ready `amat_vs_<x>.dat` and `energy_vs_<x>.dat` into `dir`.
void write_plot_data(const std::string& dir, const std::string& x_name, const std::vector<std::string>& x_values,
                     const std::vector<RunResult>& results);

}  // namespace vespa
