#include "vespa/pagealloc.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "vespa/rng.hpp"

namespace vespa {

namespace {

constexpr std::uint64_t kPageTableChunks = 4;

constexpr Addr region_number_of(Addr vaddr) { return vaddr >> offset_bits(PageSize::Super2M); }
constexpr Addr giga_number_of(Addr vaddr) { return vaddr >> offset_bits(PageSize::Super1G); }

}  // namespace

PageAllocator::PageAllocator(AllocatorConfig config, std::uint64_t shootdown_cycles)
    : config_(config), shootdown_cycles_(shootdown_cycles) {
    if (!(config_.superpage_probability >= 0.0 && config_.superpage_probability <= 1.0)) {
        throw std::invalid_argument(fmt::format("superpage_probability={} is outside [0,1]",
                                                config_.superpage_probability));
    }
    const std::uint64_t chunks = config_.physical_frames / kFramesPer2M;
    if (chunks <= kPageTableChunks) {
        throw std::invalid_argument(fmt::format(
            "physical_frames={} is too small (need more than {} 2MB chunks)",
            config_.physical_frames, kPageTableChunks));
    }
    total_chunks_ = chunks - kPageTableChunks;
    page_table_base_ = (total_chunks_ * kFramesPer2M) << 12;
}

bool PageAllocator::region_wants_superpage(Addr region_number) const {
    const double u = unit_interval(splitmix64(config_.rng_seed ^ splitmix64(region_number)));
    return u < config_.superpage_probability;
}

Addr PageAllocator::allocate_chunk() {
    if (!free_chunks_.empty()) {
        Addr chunk = free_chunks_.back();
        free_chunks_.pop_back();
        return chunk;
    }
    if (next_chunk_ >= total_chunks_) {
        throw AllocationFault(fmt::format("physical memory exhausted ({} frames)",
                                          config_.physical_frames));
    }
    return (next_chunk_++) * kFramesPer2M;
}

void PageAllocator::free_chunk(Addr chunk) { free_chunks_.push_back(chunk); }

void PageAllocator::shuffle_offsets(Region& region, Addr region_number) const {
    std::iota(region.frame_offset.begin(), region.frame_offset.end(), std::uint16_t{0});
    Rng rng(splitmix64(config_.rng_seed + 0x5851F42D4C957F2DULL * (region_number + 1)));
    for (std::size_t i = region.frame_offset.size() - 1; i > 0; --i) {
        std::swap(region.frame_offset[i], region.frame_offset[rng.below(i + 1)]);
    }
}

PageAllocator::Region& PageAllocator::touch_region(Addr region_number) {
    auto it = regions_.find(region_number);
    if (it != regions_.end()) return it->second;

    Region region;
    region.chunk = allocate_chunk();
    region.epoch = epoch_;
    if (region_wants_superpage(region_number)) {
        region.kind = RegionKind::Super;
        ++superpage_regions_;
    } else {
        region.kind = RegionKind::Fragmented;
        shuffle_offsets(region, region_number);
    }
    ++regions_touched_;
    return regions_.emplace(region_number, region).first->second;
}

Translation PageAllocator::translate(Addr vaddr) {
    check_address(vaddr);
    if (!gigapages_.empty()) {
        auto g = gigapages_.find(giga_number_of(vaddr));
        if (g != gigapages_.end()) {
            const Addr offset = vaddr & (page_bytes(PageSize::Super1G) - 1);
            return {(g->second << 12) + offset, PageSize::Super1G};
        }
    }
    Region& region = touch_region(region_number_of(vaddr));
    const Addr offset2m = vaddr & (page_bytes(PageSize::Super2M) - 1);
    if (region.kind == RegionKind::Super) return {(region.chunk << 12) + offset2m, PageSize::Super2M};

    const auto page = static_cast<std::size_t>(offset2m >> 12);
    region.mapped.set(page);
    const Addr pfn = region.chunk + region.frame_offset[page];
    return {(pfn << 12) | (vaddr & 0xFFF), PageSize::Base4K};
}

std::optional<Translation> PageAllocator::lookup(Addr vaddr) const {
    auto m = mapping_for(vaddr);
    if (!m) return std::nullopt;
    const Addr offset = vaddr & (page_bytes(m->size) - 1);
    return Translation{(m->pfn << 12) + offset, m->size};
}

std::optional<PageMapping> PageAllocator::mapping_for(Addr vaddr) const {
    if (vaddr & ~kAddressMask) return std::nullopt;
    if (auto g = gigapages_.find(giga_number_of(vaddr)); g != gigapages_.end()) {
        const Addr vpn = (vaddr >> offset_bits(PageSize::Super1G)) * kFramesPer1G;
        return PageMapping{vpn, g->second, PageSize::Super1G, 0};
    }
    auto it = regions_.find(region_number_of(vaddr));
    if (it == regions_.end()) return std::nullopt;
    const Region& region = it->second;
    const Addr region_vpn = region_number_of(vaddr) * kFramesPer2M;
    if (region.kind == RegionKind::Super)
        return PageMapping{region_vpn, region.chunk, PageSize::Super2M, region.epoch};
    const auto page = static_cast<std::size_t>((vaddr >> 12) & (kFramesPer2M - 1));
    if (!region.mapped.test(page)) return std::nullopt;
    return PageMapping{region_vpn + page, region.chunk + region.frame_offset[page], PageSize::Base4K,
                       region.epoch};
}

PromotionEvent PageAllocator::promote(Addr region_base) {
    check_address(region_base);
    if (region_base & (page_bytes(PageSize::Super2M) - 1))
        throw PageTableError(fmt::format("promote: {:#x} is not 2MB-aligned", region_base));
    const Addr rn = region_number_of(region_base);
    auto it = regions_.find(rn);
    if (it == regions_.end() || it->second.kind != RegionKind::Fragmented) {
        throw PageTableError(
            fmt::format("promote: region {:#x} is not mapped with base pages", region_base));
    }
    Region& region = it->second;
    if (!region.mapped.all()) {
        throw PageTableError(fmt::format("promote: region {:#x} has only {} of 512 base pages mapped",
                                         region_base, region.mapped.count()));
    }

    PromotionEvent event;
    event.region_base = region_base;
    event.shootdown_cycles = shootdown_cycles_;
    event.old_pairs.reserve(kFramesPer2M);
    const Addr region_vpn = rn * kFramesPer2M;
    for (Addr i = 0; i < kFramesPer2M; ++i)
        event.old_pairs.emplace_back(region_vpn + i, region.chunk + region.frame_offset[i]);

    const Addr old_chunk = region.chunk;
    region.chunk = allocate_chunk();
    free_chunk(old_chunk);
    region.kind = RegionKind::Super;
    region.mapped.reset();
    region.epoch = ++epoch_;
    ++superpage_regions_;
    event.new_pfn = region.chunk;
    return event;
}

DemotionEvent PageAllocator::demote(Addr region_base) {
    check_address(region_base);
    if (region_base & (page_bytes(PageSize::Super2M) - 1))
        throw PageTableError(fmt::format("demote: {:#x} is not 2MB-aligned", region_base));
    auto it = regions_.find(region_number_of(region_base));
    if (it == regions_.end() || it->second.kind != RegionKind::Super) {
        throw PageTableError(
            fmt::format("demote: region {:#x} is not mapped as a 2MB page", region_base));
    }
    Region& region = it->second;
    region.kind = RegionKind::Fragmented;
    std::iota(region.frame_offset.begin(), region.frame_offset.end(), std::uint16_t{0});
    region.mapped.set();
    region.epoch = ++epoch_;
    --superpage_regions_;
    return {region_base, region.chunk};
}

void PageAllocator::map_1g(Addr region_base) {
    check_address(region_base);
    if (!config_.enable_1g) throw PageTableError("map_1g: 1GB pages are disabled");
    if (region_base & (page_bytes(PageSize::Super1G) - 1))
        throw PageTableError(fmt::format("map_1g: {:#x} is not 1GB-aligned", region_base));
    const Addr gn = giga_number_of(region_base);
    if (gigapages_.contains(gn))
        throw PageTableError(fmt::format("map_1g: {:#x} is already mapped", region_base));
    const Addr first_region = region_number_of(region_base);
    for (Addr r = first_region; r < first_region + 512; ++r) {
        if (regions_.contains(r))
            throw PageTableError(fmt::format("map_1g: {:#x} overlaps touched 2MB regions", region_base));
    }
    // Align the bump pointer to a 1GB boundary; skipped chunks are recycled.
    while (next_chunk_ % 512 != 0) {
        if (next_chunk_ >= total_chunks_) break;
        free_chunks_.insert(free_chunks_.begin(), (next_chunk_++) * kFramesPer2M);
    }
    if (next_chunk_ + 512 > total_chunks_)
        throw AllocationFault("physical memory exhausted allocating a 1GB page");
    gigapages_.emplace(gn, next_chunk_ * kFramesPer2M);
    next_chunk_ += 512;
    ++epoch_;
}

void PageAllocator::populate_region(Addr region_base) {
    Region& region = touch_region(region_number_of(region_base));
    if (region.kind == RegionKind::Fragmented) region.mapped.set();
}

unsigned PageAllocator::walk_levels(PageSize size) {
    switch (size) {
    case PageSize::Base4K: return 4;
    case PageSize::Super2M: return 3;
    case PageSize::Super1G: return 2;
    }
    return 4;
}

Addr PageAllocator::page_table_entry_paddr(Addr vaddr, unsigned level) const {
    const unsigned shift = 39 - 9 * std::min(level, 3u);
    const Addr entry = (vaddr & kAddressMask) >> shift;
    const Addr area = page_bytes(PageSize::Super2M);
    return page_table_base_ + level * area + ((entry * 8) & (area - 8));
}

std::vector<PageMapping> PageAllocator::mappings() const {
    std::vector<PageMapping> out;
    for (const auto& [gn, pfn] : gigapages_)
        out.push_back({gn * kFramesPer1G, pfn, PageSize::Super1G, 0});
    for (const auto& [rn, region] : regions_) {
        const Addr region_vpn = rn * kFramesPer2M;
        if (region.kind == RegionKind::Super) {
            out.push_back({region_vpn, region.chunk, PageSize::Super2M, region.epoch});
            continue;
        }
        for (Addr i = 0; i < kFramesPer2M; ++i) {
            if (region.mapped.test(i)) {
                out.push_back({region_vpn + i, region.chunk + region.frame_offset[i],
                               PageSize::Base4K, region.epoch});
            }
        }
    }
    std::sort(out.begin(), out.end(),
              [](const PageMapping& a, const PageMapping& b) { return a.vpn < b.vpn; });
    return out;
}

void PageAllocator::check_invariants() const {
    const auto maps = mappings();
    Addr covered_until = 0;
    bool first = true;
    std::unordered_map<Addr, Addr> frame_owner;
    for (const auto& m : maps) {
        const Addr span = frames_per_page(m.size);
        if (m.vpn % span != 0 || m.pfn % span != 0) {
            throw std::logic_error(fmt::format("misaligned {} mapping vpn={:#x} pfn={:#x}",
                                               to_string(m.size), m.vpn, m.pfn));
        }
        if (!first && m.vpn < covered_until)
            throw std::logic_error(fmt::format("vpn {:#x} covered by two mappings", m.vpn));
        covered_until = m.vpn + span;
        first = false;
        if (m.size == PageSize::Base4K) {
            if (auto [it, fresh] = frame_owner.emplace(m.pfn, m.vpn); !fresh) {
                throw std::logic_error(fmt::format("frame {:#x} mapped by vpns {:#x} and {:#x}", m.pfn,
                                                   it->second, m.vpn));
            }
        }
    }
}

}  // namespace vespa
