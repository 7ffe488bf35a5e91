#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <list>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "vespa/cache.hpp"
#include "vespa/metrics.hpp"
#include "vespa/pagealloc.hpp"
#include "vespa/tlb.hpp"
#include "vespa/trace.hpp"

namespace vespa {

inline constexpr unsigned kMaxCores = 64;

/// Full-bit directory entry. `owner` is the core holding the line in M, O or
/// E (or -1). `superpage_backed` stays true only while every holder filled the
/// line on the single-bank path, which lets FourEightWay probes read one bank.
struct DirectoryEntry {
    Addr line = 0;
    std::uint64_t sharers = 0;
    int owner = -1;
    bool superpage_backed = false;
};

/// Directory co-located with the shared L2. Unbounded by default; with a
/// capacity, the least recently allocated entry is recalled when full.
class Directory {
public:
    explicit Directory(std::size_t capacity = 0) : capacity_(capacity) {}

    [[nodiscard]] const DirectoryEntry* find(Addr line) const;
    DirectoryEntry* find(Addr line);

    /// Returns the entry for `line`, creating it if needed. When a bounded
    /// directory is full the victim entry is copied to `evicted` and removed.
    DirectoryEntry& obtain(Addr line, std::optional<DirectoryEntry>& evicted);

    /// Clears `core` from the sharer set (and ownership); drops empty entries.
    void remove_sharer(Addr line, unsigned core);
    void erase(Addr line);

    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    [[nodiscard]] std::size_t capacity() const { return capacity_; }

    /// Entries sorted by line address.
    [[nodiscard]] std::vector<DirectoryEntry> snapshot() const;

private:
    struct Slot {
        DirectoryEntry entry;
        std::list<Addr>::iterator age;
    };
    std::size_t capacity_;
    std::unordered_map<Addr, Slot> entries_;
    std::list<Addr> order_;  // front = oldest
};

struct MachineConfig {
    CacheConfig cache;
    TlbConfig tlb;
    AllocatorConfig allocator;
    unsigned cores = 1;
    unsigned miss_penalty_cycles = 20;
    std::uint64_t shootdown_cycles = 200;
    /// Metrics are reset once this many demand references have executed.
    std::uint64_t warmup_references = 0;
    /// Page-walk memory references are looked up in the L1 (TLB-bypassing path).
    bool walk_references = false;
    /// Compare every read against a flat reference memory.
    bool check_data = true;
    /// Disabling this shows the data check catching stale lines.
    bool sweep_on_promote = true;
    /// Grant E on a read miss with no other holder. Off: read misses grant S.
    bool exclusive_grant = false;
    std::size_t directory_entries = 0;  // 0 = unbounded
    /// Global protocol scan every K references; 0 disables.
    std::uint64_t invariant_interval = 0;

    void validate() const;
};

struct AccessEvent {
    unsigned core = 0;
    Addr vaddr = 0;
    Addr paddr = 0;
    bool is_write = false;
    PageSize page_size = PageSize::Base4K;
    TlbLevel tlb_level = TlbLevel::L1;
    LookupOutcome outcome;
    bool stale = false;
};

struct MachineStats {
    std::uint64_t references = 0;
    std::uint64_t promotions = 0;
    std::uint64_t demotions = 0;
    std::uint64_t ignored_promotions = 0;  // region already a superpage
    std::uint64_t ignored_demotions = 0;   // region not a superpage
    std::uint64_t stale_reads = 0;
    std::uint64_t invariant_scans = 0;
    std::uint64_t directory_recalls = 0;
    std::array<std::uint64_t, 3> probes_by_kind{};  // indexed by ProbeKind
};

class ProtocolViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// N cores with private L1s and TLBs, one shared page allocator and a MOESI
/// directory. Records are executed in round-robin order, one memory
/// reference per core per turn; probes are delivered synchronously.
class Machine {
public:
    explicit Machine(const MachineConfig& config);

    void set_observer(std::function<void(const AccessEvent&)> observer) {
        observer_ = std::move(observer);
    }

    /// Runs the source to exhaustion. Memory and instruction records are routed
    /// by thread id; Promote/Demote records are ordered with thread 0.
    void run(RecordSource& source);

    /// Executes one record immediately.
    void execute(const TraceRecord& record);

    AccessEvent access(unsigned core, Addr vaddr, bool is_write);

    /// Maps any missing base pages of the region, then promotes it with a
    /// shootdown and sweep on every core. No-op if already a superpage.
    void promote(Addr region_base);
    /// Breaks a 2MB page into base pages (shootdown only). No-op otherwise.
    void demote(Addr region_base);

    /// Throws ProtocolViolation (with a state dump) on any SWMR, directory or
    /// per-cache invariant failure.
    void check_invariants() const;
    [[nodiscard]] std::string dump(Addr line) const;

    [[nodiscard]] unsigned cores() const { return config_.cores; }
    [[nodiscard]] const MachineConfig& config() const { return config_; }
    [[nodiscard]] const MetricsAccumulator& metrics(unsigned core) const { return metrics_.at(core); }
    [[nodiscard]] MetricsAccumulator total_metrics() const;
    [[nodiscard]] const L1Cache& cache(unsigned core) const { return caches_.at(core); }
    [[nodiscard]] const Tlb& tlb(unsigned core) const { return tlbs_.at(core); }
    [[nodiscard]] PageAllocator& allocator() { return allocator_; }
    [[nodiscard]] const PageAllocator& allocator() const { return allocator_; }
    [[nodiscard]] const Directory& directory() const { return directory_; }
    [[nodiscard]] const MachineStats& stats() const { return stats_; }

private:
    [[nodiscard]] Addr line_of(Addr paddr) const { return paddr & ~Addr{config_.cache.geometry.line_bytes - 1u}; }
    std::uint64_t read_miss(unsigned core, Addr line, Addr vaddr, PageSize size, bool bypass);
    void write_miss(unsigned core, Addr line, Addr vaddr, PageSize size);
    void upgrade(unsigned core, Addr line);
    void install(unsigned core, const FillRequest& request);
    ProbeOutcome probe(unsigned target, Addr line, ProbeKind kind, bool superpage_backed);
    DirectoryEntry& directory_entry(Addr line);
    void walk_references(unsigned core, Addr vaddr, PageSize size);
    void note_holder(DirectoryEntry& entry, unsigned core, bool superpage_fill);
    [[nodiscard]] std::uint64_t memory_value(Addr line) const;
    void reset_metrics();

    MachineConfig config_;
    PageAllocator allocator_;
    std::vector<Tlb> tlbs_;
    std::vector<L1Cache> caches_;
    std::vector<MetricsAccumulator> metrics_;
    Directory directory_;
    std::unordered_map<Addr, std::uint64_t> memory_;     // physical line -> token
    std::unordered_map<Addr, std::uint64_t> reference_;  // virtual line -> latest token
    std::uint64_t write_token_ = 0;
    MachineStats stats_;
    std::function<void(const AccessEvent&)> observer_;
};

struct CoherenceEnergyReport {
    std::vector<double> per_core_energy;
    std::vector<std::uint64_t> per_core_probes;
    double total_energy = 0.0;
    std::uint64_t probes = 0;
    /// The same probes priced as full-set reads without the bank decoder.
    double baseline_equivalent_energy = 0.0;
    /// Every probe read exactly ways_per_bank ways.
    bool all_single_bank = true;

    [[nodiscard]] std::optional<double> energy_per_probe() const;
};

/// Covers L1 probe energy only; directory and L2 lookups are not priced.
CoherenceEnergyReport coherence_energy_report(const Machine& machine);

/// 1 - (per-probe energy of `candidate`) / (per-probe energy of `baseline`).
std::optional<double> per_probe_reduction(const CoherenceEnergyReport& candidate,
                                          const CoherenceEnergyReport& baseline);

}  // namespace vespa
