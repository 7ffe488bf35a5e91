#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vespa/mcsim.hpp"
#include "vespa/trace.hpp"

namespace vespa::oracle {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct SelftestOptions {
    unsigned traces = 100;
    std::uint64_t accesses = 100000;
    unsigned scenarios = 50;
    unsigned variants = 1000;
    std::uint64_t seed = 20240607;
};

/// Machine configuration built through the regular config path.
MachineConfig machine_config(unsigned capacity_kb, const std::string& mode, const std::string& policy,
                             double superpage_probability, std::uint64_t alloc_seed = 1,
                             double frequency_ghz = 1.33);

/// The i-th randomized workload used by the oracle checks.
struct RandomWorkload {
    GeneratorSpec spec;
    unsigned capacity_kb = 32;
    double probability = 0.0;
};
RandomWorkload random_workload(std::uint64_t seed, unsigned index, std::uint64_t accesses);

struct Stream {
    std::vector<std::uint64_t> paddrs;
    std::vector<bool> hits;
};

/// Runs a single-core machine over the workload and records its demand stream.
Stream record_stream(const MachineConfig& config, const GeneratorSpec& spec);

CheckResult check_baseline_oracle(const SelftestOptions& options);
CheckResult check_zero_superpage(const SelftestOptions& options);
CheckResult check_page_size_independence(const SelftestOptions& options);
/// With `sweep` false the same scenarios must expose stale reads (test power).
CheckResult check_promotion_sweep_safety(const SelftestOptions& options, bool sweep = true);

std::vector<CheckResult> run_selftest(const SelftestOptions& options);

}  // namespace vespa::oracle
