#include "vespa/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace vespa {

void WaysHistogram::add(unsigned ways, std::uint64_t n) {
    if (ways >= counts.size()) counts.resize(ways + 1, 0);
    counts[ways] += n;
}

void WaysHistogram::merge(const WaysHistogram& other) {
    if (other.counts.size() > counts.size()) counts.resize(other.counts.size(), 0);
    for (std::size_t i = 0; i < other.counts.size(); ++i) counts[i] += other.counts[i];
}

std::uint64_t WaysHistogram::total() const {
    return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

void MetricsAccumulator::accumulate_demand(const LookupOutcome& o, unsigned miss_penalty_cycles,
                                           bool superpage_page, bool is_write) {
    ++accesses;
    if (is_write) ++writes;
    if (superpage_page) ++superpage_accesses;
    std::uint64_t cycles = o.latency_cycles;
    sum_hit_cycles += o.latency_cycles;
    if (o.hit) {
        ++hits;
    } else {
        ++misses;
        sum_miss_penalty_cycles += miss_penalty_cycles;
        cycles += miss_penalty_cycles;
    }
    ways_read += o.ways_read;
    if (o.way_predicted) {
        ++predictions;
        if (o.prediction_correct) ++predictions_correct;
    }
    (o.speculation_correct ? ways_superpage_path : ways_full_path).add(o.ways_read);
    dynamic_energy_total += o.dynamic_energy;
    leakage_energy_total += leakage_power * static_cast<double>(cycles);
}

void MetricsAccumulator::accumulate_walk(const LookupOutcome& o) {
    ++walk_references;
    dynamic_energy_total += o.dynamic_energy;
}

void MetricsAccumulator::accumulate_probe(const LookupOutcome& o) {
    ++coherence_probes;
    if (o.hit) ++coherence_probe_hits;
    ways_probe.add(o.ways_read);
    coherence_probe_energy += o.dynamic_energy;
    dynamic_energy_total += o.dynamic_energy;
}

void MetricsAccumulator::accumulate_sweep(const SweepReport& r) {
    ++sweeps;
    sweep_stall_cycles += r.stall_cycles;
    writebacks += r.writebacks;
    leakage_energy_total += leakage_power * static_cast<double>(r.stall_cycles);
}

void MetricsAccumulator::merge(const MetricsAccumulator& o) {
    accesses += o.accesses;
    hits += o.hits;
    misses += o.misses;
    writes += o.writes;
    instruction_count += o.instruction_count;
    sum_hit_cycles += o.sum_hit_cycles;
    sum_miss_penalty_cycles += o.sum_miss_penalty_cycles;
    sweep_stall_cycles += o.sweep_stall_cycles;
    sweeps += o.sweeps;
    superpage_accesses += o.superpage_accesses;
    ways_read += o.ways_read;
    predictions += o.predictions;
    predictions_correct += o.predictions_correct;
    coherence_probes += o.coherence_probes;
    coherence_probe_hits += o.coherence_probe_hits;
    walk_references += o.walk_references;
    writebacks += o.writebacks;
    dynamic_energy_total += o.dynamic_energy_total;
    coherence_probe_energy += o.coherence_probe_energy;
    leakage_energy_total += o.leakage_energy_total;
    ways_superpage_path.merge(o.ways_superpage_path);
    ways_full_path.merge(o.ways_full_path);
    ways_probe.merge(o.ways_probe);
}

std::optional<double> amat(const MetricsAccumulator& m) {
    if (m.accesses == 0) return std::nullopt;
    const double n = static_cast<double>(m.accesses);
    const double hit_time = static_cast<double>(m.sum_hit_cycles) / n;
    const double miss_rate = static_cast<double>(m.misses) / n;
    const double miss_penalty = static_cast<double>(m.sum_miss_penalty_cycles) /
                                static_cast<double>(std::max<std::uint64_t>(m.misses, 1));
    return hit_time + miss_rate * miss_penalty;
}

std::optional<double> mpki(const MetricsAccumulator& m) {
    if (m.instruction_count == 0) return std::nullopt;
    return 1000.0 * static_cast<double>(m.misses) / static_cast<double>(m.instruction_count);
}

std::optional<double> hit_rate(const MetricsAccumulator& m) {
    if (m.accesses == 0) return std::nullopt;
    return static_cast<double>(m.hits) / static_cast<double>(m.accesses);
}

std::optional<double> ways_read_mean(const MetricsAccumulator& m) {
    if (m.accesses == 0) return std::nullopt;
    return static_cast<double>(m.ways_read) / static_cast<double>(m.accesses);
}

std::optional<double> prediction_accuracy(const MetricsAccumulator& m) {
    if (m.predictions == 0) return std::nullopt;
    return static_cast<double>(m.predictions_correct) / static_cast<double>(m.predictions);
}

}  // namespace vespa
