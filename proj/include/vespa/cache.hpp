#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "vespa/addr.hpp"
#include "vespa/energy.hpp"
#include "vespa/pagealloc.hpp"
#include "vespa/tlb.hpp"

namespace vespa {

enum class CoherenceState : std::uint8_t { I, S, E, O, M };

const char* to_string(CoherenceState state);

constexpr bool is_owner_state(CoherenceState s) {
    return s == CoherenceState::M || s == CoherenceState::O || s == CoherenceState::E;
}

enum class CacheMode : std::uint8_t { Baseline, Vespa };

/// Victim-selection policy on fills.
///  - FourWay: install in the bank named by the physical bank_index bits.
///  - FourEightWay: superpage fills stay in the (VA = PA) bank; base-page
///    fills pick the LRU victim across the whole set.
///  - BaselineGlobal: plain set-associative LRU (baseline VIPT only).
enum class InsertionPolicy : std::uint8_t { FourWay, FourEightWay, BaselineGlobal };

enum class ProbeKind : std::uint8_t { Invalidate, RemoteRead, WritebackRequest };

const char* to_string(CacheMode mode);
const char* to_string(InsertionPolicy policy);
const char* to_string(ProbeKind kind);

struct CacheLine {
    Addr tag = 0;  // physical line address (paddr >> line_bits)
    CoherenceState state = CoherenceState::I;
    bool dirty = false;
    std::uint64_t lru_stamp = 0;
    Addr resident_paddr = 0;
    /// Data token carried for staleness checks against a reference memory.
    std::uint64_t value = 0;

    [[nodiscard]] bool valid() const { return state != CoherenceState::I; }
};

struct LookupOutcome {
    bool hit = false;
    unsigned latency_cycles = 0;
    unsigned banks_probed = 0;
    unsigned ways_read = 0;
    double dynamic_energy = 0.0;
    /// The single-bank superpage speculation was confirmed by the TLB.
    bool speculation_correct = false;
    bool way_predicted = false;
    bool prediction_correct = false;
    int way = -1;  // way holding the line on a hit
    CoherenceState state = CoherenceState::I;
};

struct ProbeOutcome {
    LookupOutcome lookup;
    CoherenceState prior_state = CoherenceState::I;
    bool supplied_data = false;
    bool dirty_data = false;
    std::uint64_t value = 0;
};

struct FillRequest {
    Addr paddr = 0;
    Addr vaddr = 0;
    PageSize page_size = PageSize::Base4K;
    CoherenceState state = CoherenceState::E;
    std::uint64_t value = 0;
    bool dirty = false;
    /// TLB-bypassing access: placed like a superpage line using the PA bank.
    bool bypass = false;
};

struct EvictionInfo {
    bool evicted = false;
    bool writeback = false;
    Addr victim_paddr = 0;
    CoherenceState victim_state = CoherenceState::I;
    std::uint64_t value = 0;
    unsigned way = 0;
};

struct SweepReport {
    std::uint64_t lines_evicted = 0;
    std::uint64_t writebacks = 0;
    std::uint64_t stall_cycles = 0;
    /// (line paddr, dirty, value) of every invalidated line.
    struct Evicted {
        Addr paddr;
        bool dirty;
        std::uint64_t value;
    };
    std::vector<Evicted> evicted;
};

struct CacheStats {
    std::uint64_t demand_hits = 0;
    std::uint64_t demand_misses = 0;
    std::uint64_t superpage_path_lookups = 0;
    std::uint64_t full_path_lookups = 0;
    std::uint64_t bypass_lookups = 0;
    std::uint64_t ways_read = 0;
    std::uint64_t probes = 0;
    std::uint64_t probe_hits = 0;
    std::uint64_t probe_ways_read = 0;
    std::uint64_t fills = 0;
    std::uint64_t evictions = 0;
    std::uint64_t writebacks = 0;
    std::uint64_t sweeps = 0;
    std::uint64_t swept_lines = 0;
    std::uint64_t predictions = 0;
    std::uint64_t predictions_correct = 0;
};

struct CacheConfig {
    CacheGeometry geometry;
    CacheMode mode = CacheMode::Vespa;
    InsertionPolicy policy = InsertionPolicy::FourWay;
    bool way_prediction = false;
    unsigned mispredict_penalty_cycles = 1;
    EnergyTable energy = EnergyTable::derived();

    /// Throws std::invalid_argument for illegal mode/policy pairs.
    void validate() const;
};

class InvariantViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Banked VIPT L1 data cache. In Vespa mode a demand lookup first reads the
/// bank named by the virtual bank_index bits; if the superpage TLBs confirm a
/// 2MB/1GB hit the lookup finishes there, otherwise the remaining banks are
/// read in the next cycle and the tag compare waits for the physical address.
/// Baseline mode reads every way of the set.
class L1Cache {
public:
    explicit L1Cache(const CacheConfig& config);

    /// Looks up the line for `tlb.paddr`; updates recency and the way
    /// predictor on hits. Does not change coherence state or data.
    LookupOutcome demand_lookup(Addr vaddr, bool is_write, const TlbResult& tlb);

    /// Lookup of a physically-addressed reference that bypasses the TLB
    /// (page-table walker). Mirrors the superpage path using the PA bank.
    LookupOutcome bypass_lookup(Addr paddr);

    /// Installs a line that is not present; returns the victim if one was evicted.
    EvictionInfo fill(const FillRequest& request);

    /// Directory-initiated lookup by physical address. `superpage_backed`
    /// narrows FourEightWay probes to one bank.
    ProbeOutcome coherence_probe(Addr paddr, ProbeKind kind, bool superpage_backed);

    /// Invalidates every line resident in one of the event's retired frames.
    SweepReport sweep_for_promotion(const PromotionEvent& event);

    /// MRU way of the (set, bank) group; bank is ignored in baseline mode,
    /// where the whole set is one group. nullopt for cold groups.
    [[nodiscard]] std::optional<unsigned> predict_way(unsigned set_index, unsigned bank_index) const;

    [[nodiscard]] const CacheLine* find_line(Addr paddr) const;
    /// Way holding the line, or -1.
    [[nodiscard]] int way_of(Addr paddr) const { return find_way(paddr); }
    /// Sets state (and clears dirty for non-M/O states) of a resident line.
    void set_state(Addr paddr, CoherenceState state);
    /// Stores `value` into a resident line and marks it M.
    void write_line(Addr paddr, std::uint64_t value);
    void invalidate(Addr paddr);

    /// Throws InvariantViolation on duplicate lines or dirty lines outside M/O.
    void check_invariants() const;

    template <typename Fn>
    void for_each_valid_line(Fn&& fn) const {
        for (const auto& line : lines_)
            if (line.valid()) fn(line);
    }

    [[nodiscard]] const CacheStats& stats() const { return stats_; }
    [[nodiscard]] const CacheConfig& config() const { return config_; }
    [[nodiscard]] const CacheGeometry& geometry() const { return config_.geometry; }

    [[nodiscard]] unsigned set_of(Addr address) const;
    [[nodiscard]] unsigned bank_of(Addr address) const;

private:
    CacheLine* set_begin(unsigned set) { return &lines_[std::size_t{set} * config_.geometry.total_ways]; }
    const CacheLine* set_begin(unsigned set) const {
        return &lines_[std::size_t{set} * config_.geometry.total_ways];
    }
    int find_in_ways(unsigned set, Addr tag, unsigned first_way, unsigned count) const;
    int find_way(Addr paddr) const;
    unsigned pick_victim(unsigned set, unsigned first_way, unsigned count) const;
    unsigned group_of_way(unsigned way) const;
    void touch(unsigned set, unsigned way);
    void apply_way_prediction(LookupOutcome& out, unsigned set, unsigned group,
                              unsigned ways_without_prediction);
    [[nodiscard]] bool banked_mode() const { return config_.mode == CacheMode::Vespa; }

    CacheConfig config_;
    std::vector<CacheLine> lines_;
    std::vector<std::int16_t> mru_;  // per (set, prediction group)
    unsigned group_ways_ = 0;
    unsigned groups_per_set_ = 0;
    std::uint64_t stamp_ = 0;
    CacheStats stats_;
};

}  // namespace vespa
