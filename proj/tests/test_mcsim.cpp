#include <doctest.h>

#include <bit>

#include "vespa/mcsim.hpp"
#include "vespa/oracle/selftest.hpp"
#include "vespa/rng.hpp"

using namespace vespa;

namespace {

constexpr Addr k2M = Addr{1} << 21;

MachineConfig machine(unsigned cores, const char* mode = "vespa", const char* policy = "fourway", double p = 1.0) {
    MachineConfig c = oracle::machine_config(32, mode, policy, p);
    c.cores = cores;
    c.invariant_interval = 1;
    return c;
}

std::uint64_t invalidations(const Machine& m) {
    return m.stats().probes_by_kind[static_cast<std::size_t>(ProbeKind::Invalidate)];
}

std::uint64_t total_probes(const Machine& m) {
    const auto& k = m.stats().probes_by_kind;
    return k[0] + k[1] + k[2];
}

// Every core reads the line, then one core writes it; repeated `rounds` times.
std::vector<TraceRecord> share_then_write(unsigned cores, unsigned rounds, Addr line) {
    std::vector<TraceRecord> out;
    for (unsigned r = 0; r < rounds; ++r) {
        for (unsigned c = 0; c < cores; ++c) out.push_back({RecordKind::Read, c, line});
        out.push_back({RecordKind::Write, r % cores, line});
    }
    return out;
}

}  // namespace

TEST_CASE("write to a shared line invalidates the other copy once") {
    Machine m(machine(2));
    const Addr x = 0x10000040;
    m.access(1, x, false);
    CHECK(m.cache(1).find_line(m.access(1, x, false).paddr)->state == CoherenceState::S);
    m.access(0, x, true);
    CHECK(invalidations(m) == 1);
    CHECK(total_probes(m) == 1);
    CHECK(m.metrics(1).coherence_probes == 1);
    CHECK(m.metrics(0).coherence_probes == 0);
    const Addr pa = m.allocator().lookup(x)->paddr;
    CHECK(m.cache(1).find_line(pa) == nullptr);
    CHECK(m.cache(0).find_line(pa)->state == CoherenceState::M);
}

TEST_CASE("two readers share without probes") {
    Machine m(machine(2));
    const Addr x = 0x10000040;
    const Addr pa = m.access(0, x, false).paddr;
    m.access(1, x, false);
    CHECK(total_probes(m) == 0);
    const auto* e = m.directory().find(pa & ~Addr{63});
    REQUIRE(e != nullptr);
    CHECK(std::popcount(e->sharers) == 2);
    CHECK(e->owner == -1);
}

TEST_CASE("remote read of a modified line") {
    Machine m(machine(2));
    const Addr x = 0x10000080;
    const Addr pa = m.access(0, x, true).paddr;
    const auto ev = m.access(1, x, false);
    CHECK_FALSE(ev.stale);
    CHECK(m.stats().probes_by_kind[static_cast<std::size_t>(ProbeKind::RemoteRead)] == 1);
    CHECK(m.cache(0).find_line(pa)->state == CoherenceState::O);
    CHECK(m.cache(1).find_line(pa)->state == CoherenceState::S);
    // the owner upgrades by invalidating the reader
    m.access(0, x, true);
    CHECK(invalidations(m) == 1);
    CHECK(m.cache(0).find_line(pa)->state == CoherenceState::M);
}

TEST_CASE("exclusive grant") {
    MachineConfig c = machine(2);
    c.exclusive_grant = true;
    Machine m(c);
    const Addr x = 0x100000C0;
    const Addr pa = m.access(0, x, false).paddr;
    CHECK(m.cache(0).find_line(pa)->state == CoherenceState::E);
    m.access(0, x, true);  // silent E -> M
    CHECK(total_probes(m) == 0);
    m.access(0, x + 64, false);
    m.access(1, x + 64, false);  // E -> S at core 0
    CHECK(m.cache(0).find_line(pa + 64)->state == CoherenceState::S);
    CHECK(total_probes(m) == 1);
}

TEST_CASE("64 cores: probes per write equal the other sharers") {
    Machine m(machine(64));
    const Addr x = 0x20000000;
    for (unsigned round = 0; round < 8; ++round) {
        for (unsigned c = 0; c < 64; ++c) m.access(c, x, false);
        const Addr line = m.allocator().lookup(x)->paddr & ~Addr{63};
        const auto sharers = m.directory().find(line)->sharers;
        const unsigned writer = (round * 7) % 64;
        const auto before = invalidations(m);
        m.access(writer, x, true);
        const auto others = static_cast<unsigned>(std::popcount(sharers & ~(std::uint64_t{1} << writer)));
        CHECK(others == 63);
        CHECK(invalidations(m) - before == others);
    }
    CHECK(m.stats().stale_reads == 0);
}

TEST_CASE("probe count grows with the number of sharers") {
    std::uint64_t previous = 0;
    for (unsigned cores : {16u, 32u, 64u}) {
        MachineConfig c = machine(cores);
        c.invariant_interval = 0;
        Machine m(c);
        VectorSource src(share_then_write(cores, 20, 0x30000000));
        m.run(src);
        const auto probes = coherence_energy_report(m).probes;
        CHECK(probes > previous);
        previous = probes;
    }
}

TEST_CASE("fourway probes read one bank; reduction matches the energy ratio") {
    auto run = [](const char* mode, const char* policy) {
        MachineConfig c = machine(4, mode, policy, 0.5);
        c.invariant_interval = 97;
        Machine m(c);
        GeneratorSpec g;
        g.model = GeneratorModel::HotspotZipf;
        g.footprint_bytes = 256 * 1024;
        g.accesses = 20000;
        g.threads = 4;
        g.write_fraction = 0.3;
        g.seed = 8;
        GeneratorSource src(g);
        m.run(src);
        CHECK(m.stats().stale_reads == 0);
        return coherence_energy_report(m);
    };
    const auto four = run("vespa", "fourway");
    const auto base = run("baseline", "baseline");
    REQUIRE(four.probes > 1000);
    CHECK(four.all_single_bank);
    CHECK_FALSE(base.all_single_bank);
    CHECK(*per_probe_reduction(four, base) == doctest::Approx(0.3943).epsilon(1e-6));
    CHECK(1.0 - four.total_energy / four.baseline_equivalent_energy == doctest::Approx(0.3943).epsilon(1e-6));
}

TEST_CASE("no sharing, no probe energy") {
    for (const char* mode : {"vespa", "baseline"}) {
        MachineConfig c = machine(4, mode, mode == std::string("vespa") ? "fourway" : "baseline");
        Machine m(c);
        GeneratorSpec g;
        g.threads = 4;
        g.private_footprints = true;
        g.write_fraction = 0.5;
        g.accesses = 5000;
        GeneratorSource src(g);
        m.run(src);
        const auto r = coherence_energy_report(m);
        CHECK(r.probes == 0);
        CHECK(r.total_energy == 0.0);
    }
}

TEST_CASE("promotion sweeps every core and charges the stall") {
    MachineConfig c = machine(2, "vespa", "foureightway", 0.0);
    Machine m(c);
    const Addr region = 0x40000000;
    for (Addr off = 0; off < 64 * 64; off += 64) {
        m.access(0, region + off * 37, true);
        m.access(1, region + off * 53 + 0x800, false);
    }
    m.promote(region);
    CHECK(m.stats().promotions == 1);
    for (unsigned core = 0; core < 2; ++core) {
        CHECK(m.metrics(core).sweeps == 1);
        CHECK(m.metrics(core).sweep_stall_cycles == 200);
    }
    CHECK(m.metrics(0).writebacks > 0);
    m.promote(region);
    CHECK(m.stats().ignored_promotions == 1);

    // everything written before the promotion reads back through the superpage
    for (Addr off = 0; off < 64 * 64; off += 64) {
        const auto ev = m.access(1, region + off * 37, false);
        CHECK(ev.page_size == PageSize::Super2M);
        CHECK_FALSE(ev.stale);
    }
    m.demote(region);
    m.demote(region);
    CHECK(m.stats().demotions == 1);
    CHECK(m.stats().ignored_demotions == 1);
    CHECK(m.access(0, region, false).page_size == PageSize::Base4K);
    CHECK(m.stats().stale_reads == 0);
}

TEST_CASE("random multicore traffic with OS events keeps every invariant") {
    for (const char* policy : {"fourway", "foureightway"}) {
        for (std::uint64_t seed = 1; seed <= 6; ++seed) {
            MachineConfig c = oracle::machine_config(32, "vespa", policy, 0.5, seed);
            c.cores = 4;
            c.invariant_interval = 13;
            c.walk_references = seed % 2 == 0;
            c.exclusive_grant = seed % 3 == 0;
            c.directory_entries = seed == 4 ? 64 : 0;
            Machine m(c);
            Rng rng(seed);
            for (int i = 0; i < 20000; ++i) {
                const Addr region = (8 + rng.below(4)) * k2M;
                if (rng.below(500) == 0) {
                    m.execute({rng.below(2) ? RecordKind::Promote : RecordKind::Demote, 0, region});
                    continue;
                }
                const Addr va = region + (rng.below(k2M / 64) & 0x3F3F) * 64;
                m.access(static_cast<unsigned>(rng.below(4)), va, rng.below(3) == 0);
            }
            m.check_invariants();
            m.allocator().check_invariants();
            CHECK(m.stats().stale_reads == 0);
            CHECK(m.stats().invariant_scans > 0);
            if (c.directory_entries) {
                CHECK(m.directory().size() <= 64);
                CHECK(m.stats().directory_recalls > 0);
            }
        }
    }
}

TEST_CASE("demote then promote keeps data and matches the reference") {
    MachineConfig c = oracle::machine_config(32, "vespa", "fourway", 1.0);
    Machine m(c);
    const Addr region = 0x80000000;
    for (Addr i = 0; i < 300; ++i) m.access(0, region + i * 0x1040 % k2M, true);
    m.demote(region);
    m.promote(region);
    CHECK(m.stats().demotions == 1);
    CHECK(m.stats().promotions == 1);
    for (Addr i = 0; i < 300; ++i) {
        const auto ev = m.access(0, region + i * 0x1040 % k2M, false);
        CHECK(ev.page_size == PageSize::Super2M);
        CHECK_FALSE(ev.stale);
    }
}

TEST_CASE("run is deterministic and routes by thread") {
    GeneratorSpec g;
    g.model = GeneratorModel::Uniform;
    g.threads = 3;
    g.accesses = 4000;
    g.write_fraction = 0.2;
    auto once = [&] {
        MachineConfig c = machine(3, "vespa", "fourway", 0.5);
        c.invariant_interval = 0;
        Machine m(c);
        GeneratorSource src(g);
        m.run(src);
        return m.total_metrics();
    };
    const auto a = once();
    const auto b = once();
    CHECK(a.accesses == 12000);
    CHECK(a.hits == b.hits);
    CHECK(a.dynamic_energy_total == b.dynamic_energy_total);
    CHECK(a.coherence_probes == b.coherence_probes);
    CHECK(a.instruction_count == 36000);

    Machine small(machine(2));
    GeneratorSource src(g);
    CHECK_THROWS_AS(small.run(src), std::invalid_argument);
}

TEST_CASE("warmup resets metrics") {
    MachineConfig c = machine(1);
    c.warmup_references = 100;
    Machine m(c);
    for (int i = 0; i < 150; ++i) m.access(0, 0x10000000 + (i % 10) * 64, false);
    CHECK(m.metrics(0).accesses == 50);
    CHECK(m.metrics(0).misses == 0);
    CHECK(*amat(m.metrics(0)) == 1.0);
}

TEST_CASE("directory") {
    Directory d(2);
    std::optional<DirectoryEntry> ev;
    d.obtain(0x40, ev).sharers = 1;
    d.obtain(0x80, ev).sharers = 2;
    CHECK_FALSE(ev);
    d.obtain(0xC0, ev);
    REQUIRE(ev);
    CHECK(ev->line == 0x40);
    CHECK(d.size() == 2);
    d.obtain(0x80, ev).sharers |= 1;
    d.remove_sharer(0x80, 1);
    CHECK(d.find(0x80)->sharers == 1);
    d.remove_sharer(0x80, 0);
    CHECK(d.find(0x80) == nullptr);
}

TEST_CASE("config validation") {
    MachineConfig c = machine(1);
    c.cores = 65;
    CHECK_THROWS_AS(Machine{c}, std::invalid_argument);
}
