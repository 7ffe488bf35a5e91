#include "vespa/energy.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace vespa {

EnergyTable EnergyTable::derived(double reduction, double overhead, unsigned narrow_ways,
                                 unsigned wide_ways, double e_way) {
    const double factor = 1.0 + overhead;
    const double keep = 1.0 - reduction;
    if (!(factor > keep)) throw std::invalid_argument("energy ratios admit no positive e_fixed");
    EnergyTable t;
    t.e_way = e_way;
    t.vespa_decoder_factor = factor;
    t.e_fixed = e_way * (keep * wide_ways - factor * narrow_ways) / (factor - keep);
    t.validate();
    return t;
}

void EnergyTable::validate() const {
    auto non_negative = [](double v, const char* name) {
        if (!(v >= 0.0)) throw std::invalid_argument(fmt::format("energy.{}={} must be >= 0", name, v));
    };
    non_negative(e_way, "e_way");
    non_negative(e_fixed, "e_fixed");
    non_negative(leakage_power_baseline, "leakage_baseline");
    non_negative(leakage_power_vespa, "leakage_vespa");
    if (!(vespa_decoder_factor >= 1.0)) {
        throw std::invalid_argument(
            fmt::format("energy.decoder_factor={} must be >= 1", vespa_decoder_factor));
    }
}

double lookup_energy(const EnergyTable& table, unsigned ways_read, bool vespa_path) {
    const double e = table.e_fixed + ways_read * table.e_way;
    return vespa_path ? e * table.vespa_decoder_factor : e;
}

}  // namespace vespa
