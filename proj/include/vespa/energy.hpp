#pragma once

namespace vespa {

/// Normalized L1 lookup energy model: one unit per way read (data + tag),
/// a fixed per-access term for decoders, drivers and output muxing, and a
/// multiplicative overhead for the bank decoder on the banked design.
struct EnergyTable {
    double e_way = 1.0;
    double e_fixed = 0.0;
    double vespa_decoder_factor = 1.0041;
    double leakage_power_baseline = 1.0;
    double leakage_power_vespa = 1.0;

    /// Solves for e_fixed so that a decoder-augmented `narrow_ways` lookup is
    /// `reduction` cheaper than a plain `wide_ways` lookup:
    ///   (e_fixed + narrow*e_way) * (1 + overhead) = (1 - reduction) * (e_fixed + wide*e_way)
    /// With the defaults (39.43%, 0.41%, 4 vs 8 ways) e_fixed is about 2.0813.
    static EnergyTable derived(double reduction = 0.3943, double overhead = 0.0041,
                               unsigned narrow_ways = 4, unsigned wide_ways = 8,
                               double e_way = 1.0);

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;
};

/// (e_fixed + ways_read * e_way), scaled by the decoder factor on the banked path.
double lookup_energy(const EnergyTable& table, unsigned ways_read, bool vespa_path);

}  // namespace vespa
