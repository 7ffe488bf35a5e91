#pragma once

#include <array>
#include <cstdint>
#include <list>
#include <optional>
#include <unordered_map>

#include "vespa/addr.hpp"
#include "vespa/pagealloc.hpp"

namespace vespa {

struct TlbConfig {
    unsigned entries_4k = 64;
    unsigned entries_2m = 32;
    unsigned entries_1g = 8;
    unsigned entries_l2 = 512;
    unsigned latency_base_cycles = 2;
    unsigned latency_super_cycles = 1;
    unsigned l2_latency_cycles = 7;
    unsigned walk_latency_cycles = 50;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

enum class TlbLevel : std::uint8_t { L1, L2, Walk };

const char* to_string(TlbLevel level);

struct TlbResult {
    TlbLevel hit_level = TlbLevel::Walk;
    PageSize page_size = PageSize::Base4K;
    Addr paddr = 0;
    /// Cycle at which the superpage TLBs report hit or miss.
    unsigned super_signal_cycle = 0;
    /// Cycle at which the physical address is known.
    unsigned full_resolution_cycle = 0;

    /// True when the fast superpage TLBs hit, confirming the speculative single-bank lookup.
    [[nodiscard]] bool superpage_signal() const {
        return hit_level == TlbLevel::L1 && is_superpage(page_size);
    }
};

struct TlbEntry {
    Addr vpn = 0;  // at the granularity of page_size
    Addr pfn = 0;  // first 4KB frame
    PageSize page_size = PageSize::Base4K;
    std::uint64_t lru_stamp = 0;
};

struct TlbStats {
    std::array<std::uint64_t, 3> l1_hits{};  // indexed by PageSize
    std::uint64_t l1_misses = 0;
    std::uint64_t l2_hits = 0;
    std::uint64_t walks = 0;
    std::uint64_t shootdowns = 0;
};

/// Fully-associative table with exact LRU replacement.
class LruTlbTable {
public:
    explicit LruTlbTable(unsigned capacity) : capacity_(capacity) {}

    /// Hit refreshes recency.
    std::optional<TlbEntry> lookup(Addr key, std::uint64_t stamp);
    void insert(Addr key, const TlbEntry& entry);
    /// Removes every entry whose covered frames intersect [first_vpn, first_vpn + count).
    std::size_t invalidate_frames(Addr first_vpn, Addr count);
    void clear();
    [[nodiscard]] std::size_t size() const { return index_.size(); }
    [[nodiscard]] unsigned capacity() const { return capacity_; }

private:
    struct Slot {
        Addr key;
        TlbEntry entry;
    };
    unsigned capacity_;
    std::list<Slot> order_;  // front = most recent
    std::unordered_map<Addr, std::list<Slot>::iterator> index_;
};

/// Split per-page-size L1 TLBs probed in parallel, backed by a unified L2.
class Tlb {
public:
    explicit Tlb(const TlbConfig& config);

    /// Walks consult (and may allocate in) the page allocator.
    TlbResult probe(Addr vaddr, PageAllocator& allocator);

    /// Shootdown of every translation overlapping the 2MB region at `region_base`.
    void invalidate_region(Addr region_base);
    void flush();

    [[nodiscard]] const TlbStats& stats() const { return stats_; }
    [[nodiscard]] const TlbConfig& config() const { return config_; }

private:
    LruTlbTable& l1_for(PageSize size) { return l1_[static_cast<std::size_t>(size)]; }

    TlbConfig config_;
    std::array<LruTlbTable, 3> l1_;
    LruTlbTable l2_;
    std::uint64_t stamp_ = 0;
    TlbStats stats_;
};

}  // namespace vespa
