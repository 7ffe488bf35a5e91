#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace vespa {

using Addr = std::uint64_t;

/// Width of the modeled virtual and physical address space (x86-64 canonical).
inline constexpr unsigned kAddressBits = 48;
inline constexpr Addr kAddressMask = (Addr{1} << kAddressBits) - 1;

enum class PageSize : std::uint8_t { Base4K, Super2M, Super1G };

constexpr unsigned offset_bits(PageSize size) {
    switch (size) {
    case PageSize::Base4K: return 12;
    case PageSize::Super2M: return 21;
    case PageSize::Super1G: return 30;
    }
    return 12;
}

constexpr Addr page_bytes(PageSize size) { return Addr{1} << offset_bits(size); }

/// Number of 4KB frames covered by one page of the given size.
constexpr Addr frames_per_page(PageSize size) { return page_bytes(size) >> 12; }

constexpr bool is_superpage(PageSize size) { return size != PageSize::Base4K; }

const char* to_string(PageSize size);

class GeometryError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class AddressError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// One row of the access-latency table: cycles for base and superpage TLB
/// and L1 lookups at a given capacity and clock.
struct LatencyRow {
    std::uint64_t capacity_kb = 0;
    unsigned vipt_ways = 0;
    double frequency_ghz = 0.0;
    unsigned tlb_base_cycles = 0;
    unsigned tlb_super_cycles = 0;
    unsigned l1_base_cycles = 0;
    unsigned l1_super_cycles = 0;
};

class LatencyTable {
public:
    LatencyTable() = default;
    explicit LatencyTable(std::vector<LatencyRow> rows) : rows_(std::move(rows)) {}

    /// The nine configurations (32/64/128KB at 1.33/2.80/4.00GHz).
    static LatencyTable defaults();

    /// Reads a CSV with columns
    /// capacity_kb,vipt_ways,frequency_ghz,tlb_base,tlb_super,l1_base,l1_super.
    /// Lines starting with '#' and a header line starting with "capacity" are skipped.
    static LatencyTable from_csv(const std::string& path);

    /// Frequency matches within 0.005 GHz.
    [[nodiscard]] std::optional<LatencyRow> find(std::uint64_t capacity_kb,
                                                 double frequency_ghz) const;

    [[nodiscard]] std::span<const LatencyRow> rows() const { return rows_; }

private:
    std::vector<LatencyRow> rows_;
};

struct CacheGeometry {
    std::uint64_t capacity_bytes = 0;
    unsigned line_bytes = 0;
    unsigned total_ways = 0;
    unsigned ways_per_bank = 0;
    unsigned num_banks = 0;
    unsigned num_sets = 0;
    double frequency_ghz = 0.0;
    unsigned latency_base_cycles = 0;
    unsigned latency_super_cycles = 0;

    unsigned line_bits = 0;
    unsigned set_bits = 0;
    unsigned bank_bits = 0;

    [[nodiscard]] bool banked() const { return num_banks > 1; }
    [[nodiscard]] std::string label() const;
};

/// Validates and populates a geometry; latencies come from `table` keyed by
/// (capacity, frequency). Throws GeometryError naming the violated bound.
CacheGeometry derive_geometry(std::uint64_t capacity_bytes, unsigned line_bytes,
                              unsigned total_ways, unsigned ways_per_bank,
                              double frequency_ghz, const LatencyTable& table);

/// Same validation with explicit latencies (no table lookup).
CacheGeometry derive_geometry(std::uint64_t capacity_bytes, unsigned line_bytes,
                              unsigned total_ways, unsigned ways_per_bank,
                              double frequency_ghz, unsigned latency_base_cycles,
                              unsigned latency_super_cycles);

struct AddressFields {
    Addr line_offset = 0;
    Addr set_index = 0;
    Addr bank_index = 0;
    Addr tag = 0;

    friend bool operator==(const AddressFields&, const AddressFields&) = default;
};

/// Layout, low to high: line offset, set index, bank index, tag.
AddressFields extract_fields(const CacheGeometry& geometry, Addr address);

Addr recombine(const CacheGeometry& geometry, const AddressFields& fields);

/// Throws AddressError if `address` does not fit in 48 bits.
void check_address(Addr address);

constexpr bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

constexpr unsigned log2_exact(std::uint64_t v) {
    unsigned n = 0;
    while (v > 1) {
        v >>= 1;
        ++n;
    }
    return n;
}

}  // namespace vespa
