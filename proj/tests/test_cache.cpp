#include <doctest.h>

#include <unordered_map>

#include "vespa/cache.hpp"
#include "vespa/oracle/reference_cache.hpp"
#include "vespa/rng.hpp"

using namespace vespa;

namespace {

CacheConfig config(CacheMode mode, InsertionPolicy policy, unsigned kb = 32, bool waypred = false) {
    CacheConfig c;
    c.geometry = derive_geometry(std::uint64_t{kb} * 1024, 64, kb / 4, 4, 1.33, LatencyTable::defaults());
    c.mode = mode;
    c.policy = policy;
    c.way_prediction = waypred;
    return c;
}

CacheConfig banked(InsertionPolicy policy = InsertionPolicy::FourWay, unsigned kb = 32, bool waypred = false) {
    return config(CacheMode::Vespa, policy, kb, waypred);
}

CacheConfig baseline(unsigned kb = 32) { return config(CacheMode::Baseline, InsertionPolicy::BaselineGlobal, kb); }

TlbResult super_hit(Addr paddr) {
    TlbResult t;
    t.hit_level = TlbLevel::L1;
    t.page_size = PageSize::Super2M;
    t.paddr = paddr;
    t.super_signal_cycle = 1;
    t.full_resolution_cycle = 1;
    return t;
}

TlbResult base_hit(Addr paddr, unsigned resolution = 2) {
    TlbResult t;
    t.hit_level = resolution > 2 ? TlbLevel::L2 : TlbLevel::L1;
    t.page_size = PageSize::Base4K;
    t.paddr = paddr;
    t.super_signal_cycle = 1;
    t.full_resolution_cycle = resolution;
    return t;
}

FillRequest fill_at(Addr paddr, Addr vaddr, PageSize size, bool dirty = false) {
    FillRequest f;
    f.paddr = paddr;
    f.vaddr = vaddr;
    f.page_size = size;
    f.dirty = dirty;
    f.state = dirty ? CoherenceState::M : CoherenceState::E;
    return f;
}

// Address with the given set and bank in the 32KB geometry (64 sets, 2 banks).
constexpr Addr at(Addr tag, Addr bank, Addr set) { return (tag << 13) | (bank << 12) | (set << 6); }

}  // namespace

TEST_CASE("lookup anatomy examples") {
    L1Cache c(banked());
    const Addr pa = at(5, 0, 9);
    CHECK_FALSE(c.demand_lookup(pa, false, super_hit(pa)).hit);

    c.fill(fill_at(pa, pa, PageSize::Super2M));
    auto o = c.demand_lookup(pa, false, super_hit(pa));
    CHECK(o.hit);
    CHECK(o.latency_cycles == 1);
    CHECK(o.banks_probed == 1);
    CHECK(o.ways_read == 4);
    CHECK(o.speculation_correct);

    // base page whose VA bank is 0 but whose line sits in bank 1
    const Addr pa2 = at(6, 1, 9);
    const Addr va2 = at(3, 0, 9);
    c.fill(fill_at(pa2, va2, PageSize::Base4K));
    o = c.demand_lookup(va2, false, base_hit(pa2));
    CHECK(o.hit);
    CHECK(o.latency_cycles == 2);
    CHECK(o.banks_probed == 2);
    CHECK(o.ways_read == 8);
    CHECK_FALSE(o.speculation_correct);

    // late PA from the L2 TLB
    o = c.demand_lookup(va2, false, base_hit(pa2, 9));
    CHECK(o.latency_cycles == 9);

    L1Cache b(baseline());
    b.fill(fill_at(pa, pa, PageSize::Super2M));
    o = b.demand_lookup(pa, false, super_hit(pa));
    CHECK(o.hit);
    CHECK(o.latency_cycles == 2);
    CHECK(o.ways_read == 8);
}

TEST_CASE("lookup energy follows ways read") {
    L1Cache c(banked());
    const Addr pa = at(1, 1, 3);
    c.fill(fill_at(pa, pa, PageSize::Super2M));
    const auto& e = c.config().energy;
    CHECK(c.demand_lookup(pa, false, super_hit(pa)).dynamic_energy == lookup_energy(e, 4, true));
    CHECK(c.demand_lookup(pa, false, base_hit(pa)).dynamic_energy == lookup_energy(e, 8, true));
    L1Cache b(baseline());
    CHECK(b.demand_lookup(pa, false, base_hit(pa)).dynamic_energy == lookup_energy(e, 8, false));
}

TEST_CASE("fourway fills the lowest invalid way of the PA bank") {
    L1Cache c(banked());
    const Addr pa = at(7, 1, 0);
    const auto info = c.fill(fill_at(pa, at(7, 0, 0), PageSize::Base4K));
    CHECK_FALSE(info.evicted);
    CHECK(info.way == 4);
    CHECK(c.way_of(pa) == 4);
}

TEST_CASE("fourway: five lines in one bank evict once") {
    L1Cache c(banked());
    oracle::ReferenceLru ref(64, 4, 64);
    unsigned evictions = 0;
    for (Addr t = 0; t < 5; ++t) {
        const Addr pa = at(t, 1, 12);
        CHECK_FALSE(ref.access(pa));
        if (c.fill(fill_at(pa, pa, PageSize::Base4K)).evicted) ++evictions;
    }
    CHECK(evictions == 1);
    CHECK(ref.evictions() == 1);
    CHECK(c.way_of(at(0, 1, 12)) == -1);  // LRU went first
}

TEST_CASE("foureightway: eight base-page lines share the whole set") {
    L1Cache c(banked(InsertionPolicy::FourEightWay));
    oracle::ReferenceLru ref(64, 8, 64);
    unsigned evictions = 0;
    for (Addr t = 0; t < 8; ++t) {
        const Addr pa = at(t, t % 2, 20);
        ref.access(pa);
        if (c.fill(fill_at(pa, at(t, 0, 20), PageSize::Base4K)).evicted) ++evictions;
    }
    CHECK(evictions == 0);
    CHECK(ref.evictions() == 0);

    // a superpage fill is confined to its VA bank
    L1Cache s(banked(InsertionPolicy::FourEightWay));
    for (Addr t = 0; t < 5; ++t) s.fill(fill_at(at(t, 1, 20), at(t, 1, 20), PageSize::Super2M));
    CHECK(s.stats().evictions == 1);
}

TEST_CASE("dirty victims report a writeback") {
    L1Cache c(banked());
    for (Addr t = 0; t < 4; ++t) c.fill(fill_at(at(t, 0, 1), at(t, 0, 1), PageSize::Super2M, t == 0));
    const auto info = c.fill(fill_at(at(9, 0, 1), at(9, 0, 1), PageSize::Super2M));
    CHECK(info.evicted);
    CHECK(info.writeback);
    CHECK(info.victim_paddr == at(0, 0, 1));
    CHECK(info.victim_state == CoherenceState::M);
}

TEST_CASE("coherence probes") {
    L1Cache four(banked());
    L1Cache eight(banked(InsertionPolicy::FourEightWay));
    L1Cache base(baseline());
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
        const Addr pa = rng.below(Addr{1} << 30) & ~Addr{63};
        const auto kind = static_cast<ProbeKind>(rng.below(3));
        auto o = four.coherence_probe(pa, kind, false).lookup;
        CHECK(o.ways_read == 4);
        CHECK(o.banks_probed == 1);
        CHECK(base.coherence_probe(pa, kind, false).lookup.ways_read == 8);
        CHECK(eight.coherence_probe(pa, kind, false).lookup.ways_read == 8);
        CHECK(eight.coherence_probe(pa, kind, true).lookup.ways_read == 4);
    }

    const Addr pa = at(3, 1, 5);
    auto miss = four.coherence_probe(pa, ProbeKind::Invalidate, false);
    CHECK_FALSE(miss.lookup.hit);
    CHECK_FALSE(miss.supplied_data);
    CHECK(four.find_line(pa) == nullptr);

    four.fill(fill_at(pa, pa, PageSize::Base4K, true));
    auto rr = four.coherence_probe(pa, ProbeKind::RemoteRead, false);
    CHECK(rr.lookup.hit);
    CHECK(rr.prior_state == CoherenceState::M);
    CHECK(rr.supplied_data);
    CHECK(four.find_line(pa)->state == CoherenceState::O);
    auto inv = four.coherence_probe(pa, ProbeKind::Invalidate, false);
    CHECK(inv.dirty_data);
    CHECK(four.find_line(pa) == nullptr);

    four.fill(fill_at(pa, pa, PageSize::Base4K));
    four.coherence_probe(pa, ProbeKind::RemoteRead, false);
    CHECK(four.find_line(pa)->state == CoherenceState::S);
}

TEST_CASE("promotion sweep") {
    PageAllocator alloc(AllocatorConfig{0.0, false, 3, 1u << 20});
    const Addr region = 0x400000;
    alloc.populate_region(region);
    L1Cache c(banked());
    const Addr vas[] = {region + 0x1040, region + 0x5080, region + 0x1FF0C0};
    for (int i = 0; i < 3; ++i) {
        const Addr pa = alloc.lookup(vas[i])->paddr;
        c.fill(fill_at(pa, vas[i], PageSize::Base4K, i == 1));
    }
    const Addr outside = 0x40000000;
    c.fill(fill_at(outside, outside, PageSize::Super2M));

    const auto ev = alloc.promote(region);
    const auto r = c.sweep_for_promotion(ev);
    CHECK(r.lines_evicted == 3);
    CHECK(r.writebacks == 1);
    CHECK(r.stall_cycles == 200);
    CHECK(c.find_line(outside) != nullptr);

    const auto again = c.sweep_for_promotion(ev);
    CHECK(again.lines_evicted == 0);
    CHECK(again.stall_cycles == 200);
}

TEST_CASE("foureightway: wrong-bank dirty line is swept before the superpage read") {
    AllocatorConfig ac;
    ac.superpage_probability = 0.0;
    PageAllocator alloc(ac);
    L1Cache c(banked(InsertionPolicy::FourEightWay));
    const Addr region = 0x200000;
    alloc.populate_region(region);

    // find a page whose frame flips bit 12, so the base-page line can sit outside its VA bank
    Addr va = 0;
    for (Addr p = 0; p < 512; ++p) {
        const Addr v = region + (p << 12) + 0x80;
        if (((alloc.lookup(v)->paddr ^ v) >> 12) & 1) {
            va = v;
            break;
        }
    }
    REQUIRE(va != 0);
    const Addr old_pa = alloc.lookup(va)->paddr;
    // fill the VA bank of the set so the global victim lands in the other bank
    for (Addr t = 0; t < 4; ++t) {
        const Addr other = at(100 + t, (va >> 12) & 1, (va >> 6) & 63);
        c.fill(fill_at(other, other, PageSize::Base4K));
    }
    c.fill(fill_at(old_pa, va, PageSize::Base4K, true));
    REQUIRE(static_cast<unsigned>(c.way_of(old_pa)) / 4 != c.bank_of(va));

    const auto ev = alloc.promote(region);
    c.sweep_for_promotion(ev);
    c.for_each_valid_line([&](const CacheLine& l) {
        for (auto [vpn, pfn] : ev.old_pairs) CHECK((l.resident_paddr >> 12) != pfn);
    });
    const Addr new_pa = alloc.lookup(va)->paddr;
    CHECK_FALSE(c.demand_lookup(va, false, super_hit(new_pa)).hit);
}

TEST_CASE("way prediction") {
    L1Cache c(banked(InsertionPolicy::FourWay, 32, true));
    const Addr pa = at(4, 1, 7);
    CHECK_FALSE(c.predict_way(7, 1).has_value());
    c.fill(fill_at(pa, pa, PageSize::Super2M));
    for (int i = 0; i < 100; ++i) {
        const auto o = c.demand_lookup(pa, false, super_hit(pa));
        CHECK(o.hit);
        CHECK(o.way_predicted);
        CHECK(o.prediction_correct);
        CHECK(o.ways_read == 1);
        CHECK(o.latency_cycles == 1);
    }
    CHECK(c.stats().predictions_correct == c.stats().predictions);

    // a second line in the same bank makes the next access to the first mispredict
    const Addr pb = at(5, 1, 7);
    c.fill(fill_at(pb, pb, PageSize::Super2M));
    const auto o = c.demand_lookup(pa, false, super_hit(pa));
    CHECK(o.hit);
    CHECK_FALSE(o.prediction_correct);
    CHECK(o.ways_read == 4);
    CHECK(o.latency_cycles == 2);
}

TEST_CASE("way prediction accuracy on a uniform single-bank trace") {
    // 4 lines per set in bank 0: every access after warmup hits, the MRU guess is right 1 time in 4
    L1Cache c(banked(InsertionPolicy::FourWay, 32, true));
    Rng rng(99);
    for (Addr set = 0; set < 64; ++set)
        for (Addr t = 0; t < 4; ++t) c.fill(fill_at(at(t, 0, set), at(t, 0, set), PageSize::Super2M));
    const auto before = c.stats();
    unsigned misses = 0;
    for (int i = 0; i < 1000000; ++i) {
        const Addr pa = at(rng.below(4), 0, rng.below(64));
        if (!c.demand_lookup(pa, false, super_hit(pa)).hit) ++misses;
    }
    CHECK(misses == 0);
    const auto& s = c.stats();
    const double acc = double(s.predictions_correct - before.predictions_correct) /
                       double(s.predictions - before.predictions);
    CHECK(acc == doctest::Approx(0.25).epsilon(0.08));
}

TEST_CASE("baseline mode matches the brute-force LRU reference") {
    for (unsigned kb : {32u, 64u, 128u}) {
        L1Cache c(baseline(kb));
        oracle::ReferenceLru ref(64, kb / 4, 64);
        Rng rng(kb);
        for (int i = 0; i < 50000; ++i) {
            const Addr pa = rng.below(Addr{3} * kb * 1024) & ~Addr{63};
            const bool hit = c.demand_lookup(pa, false, base_hit(pa)).hit;
            REQUIRE(hit == ref.access(pa));
            if (!hit) c.fill(fill_at(pa, pa, PageSize::Base4K));
        }
    }
}

TEST_CASE("invariants under random traffic") {
    for (auto policy : {InsertionPolicy::FourWay, InsertionPolicy::FourEightWay}) {
        L1Cache c(banked(policy, 64));
        Rng rng(static_cast<unsigned>(policy) + 1);
        std::unordered_map<Addr, bool> superpage;  // per 2MB region
        for (int i = 0; i < 40000; ++i) {
            const Addr va = rng.below(Addr{1} << 23) & ~Addr{63};
            const bool sp = superpage.try_emplace(va >> 21, rng.below(2) == 0).first->second;
            // superpages keep the low 21 bits; base pages flip the bank bits
            const Addr pa = sp ? va : va ^ (Addr{rng.below(4)} << 12 & 0x3000) ^ (Addr{1} << 30);
            const auto tlb = sp ? super_hit(pa) : base_hit(pa);
            const auto o = c.demand_lookup(va, rng.below(4) == 0, tlb);
            CHECK(o.ways_read == o.banks_probed * c.geometry().ways_per_bank);
            CHECK(o.latency_cycles >= c.geometry().latency_super_cycles);
            CHECK(o.latency_cycles == (sp ? 1u : 5u));
            if (!o.hit && c.way_of(pa) < 0) c.fill(fill_at(pa, va, sp ? PageSize::Super2M : PageSize::Base4K));
            if (i % 1000 == 0) c.check_invariants();
        }
        c.check_invariants();
    }
}

TEST_CASE("config validation") {
    CHECK_THROWS_AS(L1Cache(config(CacheMode::Vespa, InsertionPolicy::BaselineGlobal)), std::invalid_argument);
    CHECK_THROWS_AS(L1Cache(config(CacheMode::Baseline, InsertionPolicy::FourWay)), std::invalid_argument);
    L1Cache c(banked());
    c.fill(fill_at(0x40, 0x40, PageSize::Base4K));
    CHECK_THROWS_AS(c.fill(fill_at(0x40, 0x40, PageSize::Base4K)), InvariantViolation);
}
