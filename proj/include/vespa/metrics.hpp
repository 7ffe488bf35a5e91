#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "vespa/cache.hpp"

namespace vespa {

/// Ways-read histogram; index = ways read, value = lookups.
struct WaysHistogram {
    std::vector<std::uint64_t> counts;

    void add(unsigned ways, std::uint64_t n = 1);
    void merge(const WaysHistogram& other);
    [[nodiscard]] std::uint64_t total() const;
    [[nodiscard]] std::uint64_t at(unsigned ways) const {
        return ways < counts.size() ? counts[ways] : 0;
    }

    friend bool operator==(const WaysHistogram&, const WaysHistogram&) = default;
};

/// Running totals for one core (or, after merge, a whole machine).
///
/// Simulated time is the sum of demand access times (lookup latency plus the
/// miss penalty on misses) and promotion-sweep stalls; leakage energy is
/// leakage_power times that time. No CPI model is applied to non-memory
/// instructions.
struct MetricsAccumulator {
    std::uint64_t accesses = 0;
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t writes = 0;
    std::uint64_t instruction_count = 0;
    std::uint64_t sum_hit_cycles = 0;           // lookup latency, every access
    std::uint64_t sum_miss_penalty_cycles = 0;  // beyond-L1 time, misses only
    std::uint64_t sweep_stall_cycles = 0;
    std::uint64_t sweeps = 0;
    std::uint64_t superpage_accesses = 0;
    std::uint64_t ways_read = 0;
    std::uint64_t predictions = 0;
    std::uint64_t predictions_correct = 0;
    std::uint64_t coherence_probes = 0;
    std::uint64_t coherence_probe_hits = 0;
    std::uint64_t walk_references = 0;
    std::uint64_t writebacks = 0;
    double dynamic_energy_total = 0.0;  // demand + walker lookups + probes
    double coherence_probe_energy = 0.0;
    double leakage_energy_total = 0.0;
    double leakage_power = 0.0;
    WaysHistogram ways_superpage_path;
    WaysHistogram ways_full_path;
    WaysHistogram ways_probe;

    MetricsAccumulator() = default;
    explicit MetricsAccumulator(double leakage_power_per_cycle) : leakage_power(leakage_power_per_cycle) {}

    void accumulate_demand(const LookupOutcome& outcome, unsigned miss_penalty_cycles,
                           bool superpage_page, bool is_write);
    void accumulate_walk(const LookupOutcome& outcome);
    void accumulate_probe(const LookupOutcome& outcome);
    void accumulate_sweep(const SweepReport& report);
    void add_instructions(std::uint64_t count) { instruction_count += count; }

    [[nodiscard]] std::uint64_t simulated_cycles() const {
        return sum_hit_cycles + sum_miss_penalty_cycles + sweep_stall_cycles;
    }

    /// Associative and commutative.
    void merge(const MetricsAccumulator& other);
};

/// hit time + miss rate * miss penalty; nullopt with no accesses.
std::optional<double> amat(const MetricsAccumulator& m);
/// Misses per thousand instructions; nullopt with no instruction records.
std::optional<double> mpki(const MetricsAccumulator& m);
std::optional<double> hit_rate(const MetricsAccumulator& m);
std::optional<double> ways_read_mean(const MetricsAccumulator& m);
std::optional<double> prediction_accuracy(const MetricsAccumulator& m);

}  // namespace vespa
