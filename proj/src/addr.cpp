#include "vespa/addr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

namespace vespa {

const char* to_string(PageSize size) {
    switch (size) {
    case PageSize::Base4K: return "4K";
    case PageSize::Super2M: return "2M";
    case PageSize::Super1G: return "1G";
    }
    return "?";
}

LatencyTable LatencyTable::defaults() {
    // capacity, VIPT ways, GHz, TLB base, TLB super, L1 base, L1 super
    return LatencyTable({
        {32, 8, 1.33, 2, 1, 2, 1},
        {32, 8, 2.80, 4, 2, 4, 2},
        {32, 8, 4.00, 5, 3, 5, 3},
        {64, 16, 1.33, 5, 1, 5, 1},
        {64, 16, 2.80, 9, 2, 9, 2},
        {64, 16, 4.00, 13, 3, 13, 3},
        {128, 32, 1.33, 14, 2, 14, 2},
        {128, 32, 2.80, 30, 3, 30, 3},
        {128, 32, 4.00, 42, 4, 42, 4},
    });
}

LatencyTable LatencyTable::from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error(fmt::format("cannot open latency table '{}'", path));
    std::vector<LatencyRow> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#' || line.rfind("capacity", 0) == 0) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ss(line);
        LatencyRow row;
        if (!(ss >> row.capacity_kb >> row.vipt_ways >> row.frequency_ghz >> row.tlb_base_cycles >>
              row.tlb_super_cycles >> row.l1_base_cycles >> row.l1_super_cycles)) {
            throw std::runtime_error(fmt::format("{}:{}: malformed latency row", path, lineno));
        }
        rows.push_back(row);
    }
    return LatencyTable(std::move(rows));
}

std::optional<LatencyRow> LatencyTable::find(std::uint64_t capacity_kb, double frequency_ghz) const {
    for (const auto& row : rows_) {
        if (row.capacity_kb == capacity_kb && std::abs(row.frequency_ghz - frequency_ghz) < 0.005)
            return row;
    }
    return std::nullopt;
}

std::string CacheGeometry::label() const {
    return fmt::format("{}KB-{}w-{}wpb@{:.2f}GHz", capacity_bytes / 1024, total_ways, ways_per_bank,
                       frequency_ghz);
}

CacheGeometry derive_geometry(std::uint64_t capacity_bytes, unsigned line_bytes, unsigned total_ways,
                              unsigned ways_per_bank, double frequency_ghz,
                              unsigned latency_base_cycles, unsigned latency_super_cycles) {
    if (!is_pow2(capacity_bytes))
        throw GeometryError(fmt::format("capacity_bytes={} is not a power of two", capacity_bytes));
    if (!is_pow2(line_bytes))
        throw GeometryError(fmt::format("line_bytes={} is not a power of two", line_bytes));
    if (!is_pow2(total_ways))
        throw GeometryError(fmt::format("total_ways={} is not a power of two", total_ways));
    if (!is_pow2(ways_per_bank))
        throw GeometryError(fmt::format("ways_per_bank={} is not a power of two", ways_per_bank));
    if (ways_per_bank > total_ways)
        throw GeometryError(fmt::format("ways_per_bank={} exceeds total_ways={}", ways_per_bank,
                                        total_ways));
    if (std::uint64_t{line_bytes} * total_ways > capacity_bytes)
        throw GeometryError(fmt::format("line_bytes*total_ways={} exceeds capacity_bytes={}",
                                        std::uint64_t{line_bytes} * total_ways, capacity_bytes));
    if (!(frequency_ghz > 0.0))
        throw GeometryError(fmt::format("frequency_ghz={} must be positive", frequency_ghz));

    CacheGeometry g;
    g.capacity_bytes = capacity_bytes;
    g.line_bytes = line_bytes;
    g.total_ways = total_ways;
    g.ways_per_bank = ways_per_bank;
    g.num_banks = total_ways / ways_per_bank;
    g.num_sets = static_cast<unsigned>(capacity_bytes / (std::uint64_t{line_bytes} * total_ways));
    g.frequency_ghz = frequency_ghz;
    g.line_bits = log2_exact(line_bytes);
    g.set_bits = log2_exact(g.num_sets);
    g.bank_bits = log2_exact(g.num_banks);

    if (g.line_bits + g.set_bits > offset_bits(PageSize::Base4K)) {
        throw GeometryError(fmt::format(
            "VIPT bound violated: log2(line_bytes)+log2(num_sets) = {}+{} = {} > 12 "
            "(set index must lie in the 4KB page offset)",
            g.line_bits, g.set_bits, g.line_bits + g.set_bits));
    }
    if (g.line_bits + g.set_bits + g.bank_bits > offset_bits(PageSize::Super2M)) {
        throw GeometryError(fmt::format(
            "superpage bound violated: log2(line_bytes)+log2(num_sets)+log2(num_banks) = {} > 21 "
            "(bank index must lie in the 2MB page offset)",
            g.line_bits + g.set_bits + g.bank_bits));
    }
    if (latency_super_cycles == 0 || latency_base_cycles == 0)
        throw GeometryError("latencies must be at least one cycle");
    if (latency_super_cycles > latency_base_cycles) {
        throw GeometryError(fmt::format("latency_super_cycles={} exceeds latency_base_cycles={}",
                                        latency_super_cycles, latency_base_cycles));
    }
    g.latency_base_cycles = latency_base_cycles;
    g.latency_super_cycles = latency_super_cycles;
    return g;
}

CacheGeometry derive_geometry(std::uint64_t capacity_bytes, unsigned line_bytes, unsigned total_ways,
                              unsigned ways_per_bank, double frequency_ghz,
                              const LatencyTable& table) {
    auto row = table.find(capacity_bytes / 1024, frequency_ghz);
    if (!row) {
        throw GeometryError(fmt::format("no latency table row for {}KB at {:.2f}GHz",
                                        capacity_bytes / 1024, frequency_ghz));
    }
    return derive_geometry(capacity_bytes, line_bytes, total_ways, ways_per_bank, frequency_ghz,
                           row->l1_base_cycles, row->l1_super_cycles);
}

AddressFields extract_fields(const CacheGeometry& g, Addr address) {
    AddressFields f;
    f.line_offset = address & ((Addr{1} << g.line_bits) - 1);
    address >>= g.line_bits;
    f.set_index = address & ((Addr{1} << g.set_bits) - 1);
    address >>= g.set_bits;
    f.bank_index = address & ((Addr{1} << g.bank_bits) - 1);
    f.tag = address >> g.bank_bits;
    return f;
}

Addr recombine(const CacheGeometry& g, const AddressFields& f) {
    Addr a = f.tag;
    a = (a << g.bank_bits) | f.bank_index;
    a = (a << g.set_bits) | f.set_index;
    a = (a << g.line_bits) | f.line_offset;
    return a;
}

void check_address(Addr address) {
    if (address & ~kAddressMask)
        throw AddressError(fmt::format("address {:#x} exceeds the 48-bit address space", address));
}

}  // namespace vespa
