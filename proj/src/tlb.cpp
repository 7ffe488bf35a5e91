#include "vespa/tlb.hpp"

#include <fmt/format.h>

namespace vespa {

namespace {

constexpr PageSize kSizes[] = {PageSize::Base4K, PageSize::Super2M, PageSize::Super1G};

constexpr Addr vpn_at(Addr vaddr, PageSize size) { return vaddr >> offset_bits(size); }

// The unified L2 keys entries by (vpn, size).
constexpr Addr l2_key(Addr vpn, PageSize size) { return (vpn << 2) | static_cast<Addr>(size); }

}  // namespace

const char* to_string(TlbLevel level) {
    switch (level) {
    case TlbLevel::L1: return "L1";
    case TlbLevel::L2: return "L2";
    case TlbLevel::Walk: return "walk";
    }
    return "?";
}

void TlbConfig::validate() const {
    auto positive = [](unsigned v, const char* name) {
        if (v < 1) throw std::invalid_argument(fmt::format("tlb.{} must be at least 1", name));
    };
    positive(entries_4k, "entries_4k");
    positive(entries_2m, "entries_2m");
    positive(entries_1g, "entries_1g");
    positive(entries_l2, "entries_l2");
    positive(latency_base_cycles, "latency_base");
    positive(latency_super_cycles, "latency_super");
    if (latency_super_cycles > latency_base_cycles) {
        throw std::invalid_argument(fmt::format("tlb.latency_super={} exceeds tlb.latency_base={}",
                                                latency_super_cycles, latency_base_cycles));
    }
}

std::optional<TlbEntry> LruTlbTable::lookup(Addr key, std::uint64_t stamp) {
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    it->second->entry.lru_stamp = stamp;
    return it->second->entry;
}

void LruTlbTable::insert(Addr key, const TlbEntry& entry) {
    if (auto it = index_.find(key); it != index_.end()) {
        it->second->entry = entry;
        order_.splice(order_.begin(), order_, it->second);
        return;
    }
    if (index_.size() >= capacity_) {
        index_.erase(order_.back().key);
        order_.pop_back();
    }
    order_.push_front({key, entry});
    index_.emplace(key, order_.begin());
}

std::size_t LruTlbTable::invalidate_frames(Addr first_vpn, Addr count) {
    std::size_t removed = 0;
    for (auto it = order_.begin(); it != order_.end();) {
        const Addr span = frames_per_page(it->entry.page_size);
        const Addr lo = it->entry.vpn * span;
        if (lo < first_vpn + count && first_vpn < lo + span) {
            index_.erase(it->key);
            it = order_.erase(it);
            ++removed;
        } else {
            ++it;
        }
    }
    return removed;
}

void LruTlbTable::clear() {
    order_.clear();
    index_.clear();
}

Tlb::Tlb(const TlbConfig& config)
    : config_(config),
      l1_{LruTlbTable(config.entries_4k), LruTlbTable(config.entries_2m),
          LruTlbTable(config.entries_1g)},
      l2_(config.entries_l2) {
    config_.validate();
}

TlbResult Tlb::probe(Addr vaddr, PageAllocator& allocator) {
    check_address(vaddr);
    const std::uint64_t stamp = ++stamp_;
    TlbResult result;
    result.super_signal_cycle = config_.latency_super_cycles;

    auto finish = [&](const TlbEntry& e) {
        result.page_size = e.page_size;
        result.paddr = (e.pfn << 12) + (vaddr & (page_bytes(e.page_size) - 1));
    };

    // All split L1 TLBs are probed in parallel; at most one can hit.
    for (PageSize size : kSizes) {
        if (auto hit = l1_for(size).lookup(vpn_at(vaddr, size), stamp)) {
            ++stats_.l1_hits[static_cast<std::size_t>(size)];
            result.hit_level = TlbLevel::L1;
            result.full_resolution_cycle = is_superpage(size) ? config_.latency_super_cycles
                                                              : config_.latency_base_cycles;
            finish(*hit);
            return result;
        }
    }
    ++stats_.l1_misses;

    for (PageSize size : kSizes) {
        if (auto hit = l2_.lookup(l2_key(vpn_at(vaddr, size), size), stamp)) {
            ++stats_.l2_hits;
            result.hit_level = TlbLevel::L2;
            result.full_resolution_cycle = config_.latency_base_cycles + config_.l2_latency_cycles;
            l1_for(size).insert(hit->vpn, *hit);
            finish(*hit);
            return result;
        }
    }

    ++stats_.walks;
    const Translation t = allocator.translate(vaddr);
    TlbEntry entry;
    entry.page_size = t.size;
    entry.vpn = vpn_at(vaddr, t.size);
    entry.pfn = (t.paddr >> 12) & ~(frames_per_page(t.size) - 1);
    entry.lru_stamp = stamp;
    l2_.insert(l2_key(entry.vpn, t.size), entry);
    l1_for(t.size).insert(entry.vpn, entry);
    result.hit_level = TlbLevel::Walk;
    result.full_resolution_cycle =
        config_.latency_base_cycles + config_.l2_latency_cycles + config_.walk_latency_cycles;
    result.page_size = t.size;
    result.paddr = t.paddr;
    return result;
}

void Tlb::invalidate_region(Addr region_base) {
    const Addr first_vpn = region_base >> 12;
    std::size_t removed = l2_.invalidate_frames(first_vpn, kFramesPer2M);
    for (auto& table : l1_) removed += table.invalidate_frames(first_vpn, kFramesPer2M);
    if (removed) ++stats_.shootdowns;
}

void Tlb::flush() {
    for (auto& table : l1_) table.clear();
    l2_.clear();
}

}  // namespace vespa
