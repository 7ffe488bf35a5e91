#include <doctest.h>

#include <set>

#include "vespa/pagealloc.hpp"
#include "vespa/rng.hpp"

using namespace vespa;

namespace {

constexpr Addr k2M = Addr{1} << 21;

AllocatorConfig cfg(double p, std::uint64_t seed = 1) {
    AllocatorConfig c;
    c.superpage_probability = p;
    c.rng_seed = seed;
    return c;
}

}  // namespace

TEST_CASE("degenerate probabilities") {
    PageAllocator none(cfg(0.0));
    PageAllocator all(cfg(1.0));
    Rng rng(3);
    for (int i = 0; i < 2000; ++i) {
        const Addr va = rng.below(Addr{1} << 34);
        CHECK(none.translate(va).size == PageSize::Base4K);
        CHECK(all.translate(va).size == PageSize::Super2M);
    }
    none.check_invariants();
    all.check_invariants();
}

TEST_CASE("probability 0.5 over 10000 regions") {
    AllocatorConfig c = cfg(0.5, 42);
    c.physical_frames = Addr{1} << 24;  // 64GB, room for 10000 chunks
    PageAllocator a(c);
    unsigned supers = 0;
    for (Addr r = 0; r < 10000; ++r) {
        const auto t = a.translate(r * k2M + 0x1040);
        if (t.size == PageSize::Super2M) ++supers;
        CHECK(a.region_wants_superpage(r) == (t.size == PageSize::Super2M));
    }
    CHECK(supers == a.superpage_regions());
    CHECK(supers / 10000.0 == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("decision is independent of touch order") {
    PageAllocator fwd(cfg(0.3, 9));
    PageAllocator rev(cfg(0.3, 9));
    for (Addr r = 0; r < 200; ++r) fwd.translate(r * k2M);
    for (Addr r = 200; r-- > 0;) rev.translate(r * k2M);
    for (Addr r = 0; r < 200; ++r) CHECK(fwd.lookup(r * k2M)->size == rev.lookup(r * k2M)->size);
}

TEST_CASE("fragmented frames scatter bank bits") {
    PageAllocator a(cfg(0.0, 5));
    unsigned differ = 0;
    std::set<Addr> frames;
    for (Addr p = 0; p < 512; ++p) {
        const Addr va = 0x40000000 + (p << 12);
        const Addr pa = a.translate(va).paddr;
        frames.insert(pa >> 12);
        if (((va >> 12) & 1) != ((pa >> 12) & 1)) ++differ;
    }
    CHECK(frames.size() == 512);
    // a shuffle flips bit 12 for roughly half the pages
    CHECK(differ > 200);
    CHECK(differ < 312);
}

TEST_CASE("promote") {
    PageAllocator a(cfg(0.0));
    const Addr base = 0x600000;
    for (Addr p = 0; p < 511; ++p) a.translate(base + (p << 12));
    CHECK_THROWS_AS(a.promote(base), PageTableError);
    CHECK_THROWS_AS(a.promote(base + 0x1000), PageTableError);

    a.translate(base + (511u << 12));
    const Addr before = a.translate(base + 0x1F3040).paddr;
    const auto ev = a.promote(base);
    CHECK(ev.old_pairs.size() == 512);
    CHECK(ev.region_base == base);
    CHECK(ev.shootdown_cycles == 200);
    CHECK(ev.new_pfn % 512 == 0);
    std::set<Addr> vpns;
    for (auto [vpn, pfn] : ev.old_pairs) vpns.insert(vpn);
    CHECK(vpns.size() == 512);
    CHECK(*vpns.begin() == base >> 12);

    const auto t = a.translate(base + 0x1F3040);
    CHECK(t.size == PageSize::Super2M);
    CHECK(t.paddr != before);
    CHECK(t.paddr == (ev.new_pfn << 12) + 0x1F3040);
    for (Addr p = 0; p < 512; p += 37) CHECK(a.translate(base + (p << 12)).size == PageSize::Super2M);
    a.check_invariants();

    CHECK_THROWS_AS(a.promote(base), PageTableError);
}

TEST_CASE("demote preserves frames") {
    PageAllocator a(cfg(1.0));
    const Addr base = 0xA00000;
    CHECK_THROWS_AS(a.demote(base), PageTableError);  // unmapped
    std::vector<Addr> before;
    for (Addr off = 0; off < k2M; off += 0x3040) before.push_back(a.translate(base + off).paddr);
    a.demote(base);
    std::size_t i = 0;
    for (Addr off = 0; off < k2M; off += 0x3040, ++i) {
        const auto t = a.translate(base + off);
        CHECK(t.size == PageSize::Base4K);
        CHECK(t.paddr == before[i]);
    }
    a.check_invariants();
    CHECK_THROWS_AS(a.demote(base), PageTableError);

    // and back
    a.promote(base);
    CHECK(a.translate(base).size == PageSize::Super2M);
    a.check_invariants();
}

TEST_CASE("mappings partition the touched pages") {
    PageAllocator a(cfg(0.5, 11));
    Rng rng(12);
    for (int i = 0; i < 5000; ++i) a.translate(rng.below(Addr{64} * k2M));
    for (Addr r = 0; r < 64; r += 5) {
        a.populate_region(r * k2M);
        if (a.lookup(r * k2M)->size == PageSize::Base4K) a.promote(r * k2M);
    }
    a.check_invariants();
    const auto maps = a.mappings();
    Addr covered_end = 0;
    for (const auto& m : maps) {
        CHECK(m.vpn >= covered_end);
        covered_end = m.vpn + frames_per_page(m.size);
        if (m.size == PageSize::Super2M) {
            CHECK(m.vpn % 512 == 0);
            CHECK(m.pfn % 512 == 0);
        }
    }
}

TEST_CASE("1GB pages only through map_1g") {
    AllocatorConfig c = cfg(1.0);
    CHECK_THROWS_AS(PageAllocator(c).map_1g(0), PageTableError);
    c.enable_1g = true;
    PageAllocator a(c);
    CHECK(a.translate(0x1000).size == PageSize::Super2M);
    a.map_1g(Addr{1} << 30);
    const auto t = a.translate((Addr{1} << 30) + 0x12345678);
    CHECK(t.size == PageSize::Super1G);
    CHECK((t.paddr & 0x3FFFFFFF) == 0x12345678);
    CHECK_THROWS_AS(a.map_1g(0), PageTableError);
    a.check_invariants();
}

TEST_CASE("exhaustion and bad inputs") {
    AllocatorConfig c = cfg(0.0);
    c.physical_frames = 6 * 512;  // two usable chunks
    PageAllocator a(c);
    a.translate(0);
    a.translate(k2M);
    CHECK_THROWS_AS(a.translate(2 * k2M), AllocationFault);
    CHECK_THROWS_AS(a.translate(Addr{1} << 48), AddressError);
    CHECK_THROWS_AS(PageAllocator(cfg(1.5)), std::invalid_argument);
}

TEST_CASE("determinism") {
    PageAllocator a(cfg(0.4, 77));
    PageAllocator b(cfg(0.4, 77));
    Rng rng(1);
    for (int i = 0; i < 3000; ++i) {
        const Addr va = rng.below(Addr{1} << 32);
        const auto ta = a.translate(va);
        const auto tb = b.translate(va);
        CHECK(ta.paddr == tb.paddr);
        CHECK(ta.size == tb.size);
    }
    CHECK(a.mappings() == b.mappings());
}
