#pragma once

#include <array>
#include <bitset>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vespa/addr.hpp"

namespace vespa {

inline constexpr Addr kFramesPer2M = frames_per_page(PageSize::Super2M);  // 512
inline constexpr Addr kFramesPer1G = frames_per_page(PageSize::Super1G);  // 262144

/// vpn and pfn are always counted in 4KB frames, whatever the page size.
struct PageMapping {
    Addr vpn = 0;
    Addr pfn = 0;
    PageSize size = PageSize::Base4K;
    std::uint64_t dirty_epoch = 0;

    friend bool operator==(const PageMapping&, const PageMapping&) = default;
};

struct AllocatorConfig {
    double superpage_probability = 0.5;
    bool enable_1g = false;
    std::uint64_t rng_seed = 1;
    std::uint64_t physical_frames = 1u << 20;  // 4GB of 4KB frames
};

struct Translation {
    Addr paddr = 0;
    PageSize size = PageSize::Base4K;
};

struct PromotionEvent {
    Addr region_base = 0;
    /// (vpn, pfn) of the 512 retired base mappings.
    std::vector<std::pair<Addr, Addr>> old_pairs;
    Addr new_pfn = 0;
    std::uint64_t shootdown_cycles = 0;
};

struct DemotionEvent {
    Addr region_base = 0;
    Addr pfn = 0;
};

class AllocationFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised for promote/demote requests whose preconditions do not hold.
class PageTableError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Synthetic OS memory manager. Each 2MB-aligned virtual region gets a
/// physical 2MB chunk at first touch; a seeded per-region coin then decides
/// whether the region is one 2MB mapping or 512 lazily-mapped 4KB pages whose
/// frames are a shuffled permutation of that chunk. The physical placement is
/// a function of (seed, region, page size) only, so the same trace replayed at
/// different probabilities sees the same frames for every region that keeps
/// its role.
class PageAllocator {
public:
    explicit PageAllocator(AllocatorConfig config, std::uint64_t shootdown_cycles = 200);

    /// Translates, allocating on first touch. Throws AllocationFault when
    /// physical memory is exhausted and AddressError for >48-bit addresses.
    Translation translate(Addr vaddr);

    /// Translation without side effects; nullopt if unmapped.
    [[nodiscard]] std::optional<Translation> lookup(Addr vaddr) const;
    [[nodiscard]] std::optional<PageMapping> mapping_for(Addr vaddr) const;

    PromotionEvent promote(Addr region_base);
    DemotionEvent demote(Addr region_base);

    /// Maps an untouched, 1GB-aligned virtual region as a single 1GB page.
    /// Requires enable_1g.
    void map_1g(Addr region_base);

    /// Maps every remaining 4KB page of a fragmented region.
    void populate_region(Addr region_base);

    /// The seeded coin for a region; independent of touch order.
    [[nodiscard]] bool region_wants_superpage(Addr region_number) const;

    /// Synthetic physical address of the page-table entry read at `level`
    /// (0 = root) while walking `vaddr`. Page tables live in a reserved area
    /// at the top of physical memory.
    [[nodiscard]] Addr page_table_entry_paddr(Addr vaddr, unsigned level) const;

    /// Number of radix levels walked for a page of the given size.
    static unsigned walk_levels(PageSize size);

    [[nodiscard]] std::uint64_t regions_touched() const { return regions_touched_; }
    [[nodiscard]] std::uint64_t superpage_regions() const { return superpage_regions_; }
    [[nodiscard]] std::uint64_t epoch() const { return epoch_; }
    [[nodiscard]] const AllocatorConfig& config() const { return config_; }

    /// Every live mapping, ordered by vpn.
    [[nodiscard]] std::vector<PageMapping> mappings() const;

    /// Throws std::logic_error if alignment or coverage-partition invariants fail.
    void check_invariants() const;

private:
    enum class RegionKind : std::uint8_t { Super, Fragmented };

    struct Region {
        RegionKind kind = RegionKind::Fragmented;
        Addr chunk = 0;  // first pfn of the backing 2MB chunk
        std::array<std::uint16_t, kFramesPer2M> frame_offset{};
        std::bitset<kFramesPer2M> mapped;
        std::uint64_t epoch = 0;
    };

    Region& touch_region(Addr region_number);
    Addr allocate_chunk();
    void free_chunk(Addr chunk);
    void shuffle_offsets(Region& region, Addr region_number) const;

    AllocatorConfig config_;
    std::uint64_t shootdown_cycles_;
    std::uint64_t total_chunks_;
    std::uint64_t next_chunk_ = 0;
    std::vector<Addr> free_chunks_;
    std::unordered_map<Addr, Region> regions_;
    std::unordered_map<Addr, Addr> gigapages_;  // 1GB region number -> first pfn
    std::uint64_t regions_touched_ = 0;
    std::uint64_t superpage_regions_ = 0;
    std::uint64_t epoch_ = 0;
    Addr page_table_base_ = 0;
};

}  // namespace vespa
