#include <doctest.h>

#include "vespa/energy.hpp"
#include "vespa/metrics.hpp"

using namespace vespa;

namespace {

// Bisection on the ratio constraint, kept separate from the closed form in EnergyTable::derived.
double solve_e_fixed(double reduction, double factor, unsigned narrow, unsigned wide) {
    auto f = [&](double e) { return (e + narrow) * factor / (e + wide) - (1.0 - reduction); };
    double lo = 0.0, hi = 100.0;
    for (int i = 0; i < 200; ++i) {
        const double mid = 0.5 * (lo + hi);
        (f(mid) < 0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

LookupOutcome outcome(bool hit, unsigned cycles, unsigned ways = 4, double energy = 0.0) {
    LookupOutcome o;
    o.hit = hit;
    o.latency_cycles = cycles;
    o.ways_read = ways;
    o.dynamic_energy = energy;
    return o;
}

}  // namespace

TEST_CASE("derived table matches an independent solve") {
    const auto t = EnergyTable::derived();
    CHECK(t.e_way == 1.0);
    CHECK(t.vespa_decoder_factor == doctest::Approx(1.0041));
    CHECK(t.e_fixed == doctest::Approx(solve_e_fixed(0.3943, 1.0041, 4, 8)).epsilon(1e-9));
    CHECK(t.e_fixed == doctest::Approx(2.08133).epsilon(1e-5));
}

TEST_CASE("lookup energy examples") {
    const auto t = EnergyTable::derived();
    const double vespa4 = lookup_energy(t, 4, true);
    const double base8 = lookup_energy(t, 8, false);
    CHECK(vespa4 == doctest::Approx(6.106).epsilon(1e-4));
    CHECK(base8 == doctest::Approx(10.081).epsilon(1e-4));
    CHECK(1.0 - vespa4 / base8 == doctest::Approx(0.3943).epsilon(1e-6));
    CHECK(vespa4 / base8 == doctest::Approx(0.6057).epsilon(0.0005 / 0.6057));
    CHECK(vespa4 / lookup_energy(t, 4, false) - 1.0 == doctest::Approx(0.0041));

    EnergyTable unit;
    unit.e_fixed = 0.0;
    unit.vespa_decoder_factor = 1.0;
    CHECK(lookup_energy(unit, 1, true) == 1.0);
}

TEST_CASE("lookup energy is strictly increasing in ways") {
    const auto t = EnergyTable::derived();
    for (unsigned w = 1; w < 64; ++w) {
        CHECK(lookup_energy(t, w + 1, false) > lookup_energy(t, w, false));
        CHECK(lookup_energy(t, w + 1, true) > lookup_energy(t, w, true));
    }
}

TEST_CASE("derived table rejects impossible ratios and bad values") {
    CHECK_THROWS_AS(EnergyTable::derived(-0.5, 0.0), std::invalid_argument);
    EnergyTable t;
    t.vespa_decoder_factor = 0.9;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = EnergyTable{};
    t.e_way = -1;
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("amat examples") {
    MetricsAccumulator m;
    for (int i = 0; i < 9; ++i) m.accumulate_demand(outcome(true, 1), 20, false, false);
    m.accumulate_demand(outcome(false, 1), 20, false, false);
    CHECK(*amat(m) == doctest::Approx(3.0));

    MetricsAccumulator two;
    for (int i = 0; i < 5; ++i) two.accumulate_demand(outcome(true, 2), 20, false, false);
    CHECK(*amat(two) == 2.0);

    MetricsAccumulator mixed;
    for (int i = 0; i < 3; ++i) mixed.accumulate_demand(outcome(true, 1), 20, false, false);
    mixed.accumulate_demand(outcome(false, 1), 20, false, false);
    CHECK(*amat(mixed) == doctest::Approx(6.0));

    CHECK_FALSE(amat(MetricsAccumulator{}).has_value());
}

TEST_CASE("accumulator examples") {
    MetricsAccumulator m(0.5);
    m.accumulate_demand(outcome(true, 1), 20, true, false);
    m.accumulate_demand(outcome(true, 1), 20, true, false);
    CHECK(m.leakage_energy_total == 1.0);
    CHECK(m.superpage_accesses == 2);

    MetricsAccumulator k;
    for (int i = 0; i < 10; ++i) k.accumulate_demand(outcome(false, 2), 20, false, true);
    k.add_instructions(2000);
    CHECK(*mpki(k) == 5.0);
    CHECK(k.writes == 10);

    const MetricsAccumulator empty;
    CHECK(empty.accesses == 0);
    CHECK(empty.dynamic_energy_total == 0.0);
    CHECK(empty.leakage_energy_total == 0.0);
    CHECK(empty.simulated_cycles() == 0);
    CHECK_FALSE(mpki(empty).has_value());
    CHECK_FALSE(hit_rate(empty).has_value());
}

TEST_CASE("sweeps and probes fold into the totals") {
    MetricsAccumulator m(1.0);
    SweepReport r;
    r.stall_cycles = 200;
    r.writebacks = 3;
    m.accumulate_sweep(r);
    m.accumulate_probe(outcome(true, 1, 4, 6.0));
    m.accumulate_demand(outcome(false, 2, 8, 10.0), 20, false, false);
    CHECK(m.simulated_cycles() == 222);
    CHECK(m.leakage_energy_total == 222.0);
    CHECK(m.coherence_probe_energy == 6.0);
    CHECK(m.dynamic_energy_total == 16.0);
    CHECK(m.ways_probe.at(4) == 1);
    CHECK(m.ways_full_path.at(8) == 1);
    CHECK(m.writebacks == 3);
    CHECK(m.accesses == m.hits + m.misses);
}

TEST_CASE("merge is associative and commutative") {
    MetricsAccumulator a(1.0), b(1.0), c(1.0);
    a.accumulate_demand(outcome(true, 1, 4, 6.1), 20, true, false);
    b.accumulate_demand(outcome(false, 2, 8, 10.1), 20, false, true);
    b.add_instructions(100);
    c.accumulate_probe(outcome(false, 1, 4, 6.1));

    MetricsAccumulator ab_c = a;
    ab_c.merge(b);
    ab_c.merge(c);
    MetricsAccumulator bc = b;
    bc.merge(c);
    MetricsAccumulator a_bc = a;
    a_bc.merge(bc);
    MetricsAccumulator cba = c;
    cba.merge(b);
    cba.merge(a);
    for (const auto* m : {&a_bc, &cba}) {
        CHECK(m->accesses == ab_c.accesses);
        CHECK(m->misses == ab_c.misses);
        CHECK(m->instruction_count == ab_c.instruction_count);
        CHECK(m->dynamic_energy_total == doctest::Approx(ab_c.dynamic_energy_total));
        CHECK(m->ways_full_path == ab_c.ways_full_path);
        CHECK(m->ways_probe == ab_c.ways_probe);
        CHECK(*amat(*m) == *amat(ab_c));
    }
}
