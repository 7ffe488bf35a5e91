#include "vespa/config.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>

#include <fmt/format.h>

namespace vespa {

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

constexpr int kMaxIncludeDepth = 16;

}  // namespace

const std::vector<ConfigKey>& Config::keys() {
    static const std::vector<ConfigKey> k = {
        {"cache.capacity_kb", "32", "L1 capacity in KB (power of two)"},
        {"cache.line_bytes", "64", "line size in bytes"},
        {"cache.ways", "auto", "total associativity; auto = capacity / 4KB (largest VIPT-legal set count)"},
        {"cache.ways_per_bank", "4", "ways in one bank; banks = ways / ways_per_bank"},
        {"cache.frequency_ghz", "1.33", "clock, used to look up latencies"},
        {"cache.mode", "vespa", "vespa | baseline"},
        {"cache.policy", "auto", "fourway | foureightway | baseline; auto = fourway (vespa) or baseline"},
        {"cache.way_prediction", "false", "MRU way prediction"},
        {"cache.mispredict_penalty", "1", "extra cycles on a way mispredict"},
        {"cache.latency_table", "", "CSV latency table; empty = built-in nine configurations"},
        {"cache.latency_base", "auto", "L1 base-page latency override (cycles)"},
        {"cache.latency_super", "auto", "L1 superpage latency override (cycles)"},
        {"tlb.entries_4k", "64", "4KB L1 TLB entries"},
        {"tlb.entries_2m", "32", "2MB L1 TLB entries"},
        {"tlb.entries_1g", "8", "1GB L1 TLB entries"},
        {"tlb.entries_l2", "512", "unified L2 TLB entries"},
        {"tlb.latency_base", "auto", "4KB TLB latency; auto = latency table"},
        {"tlb.latency_super", "auto", "2MB/1GB TLB latency; auto = latency table"},
        {"tlb.l2_latency", "7", "added cycles for an L2 TLB hit"},
        {"tlb.walk_latency", "50", "added cycles for a page walk"},
        {"energy.e_way", "1.0", "energy per way read"},
        {"energy.e_fixed", "auto", "fixed energy per lookup; auto = solved from target_reduction"},
        {"energy.decoder_factor", "1.0041", "multiplier on banked lookups"},
        {"energy.target_reduction", "0.3943", "4-way banked vs 8-way lookup saving used to solve e_fixed"},
        {"energy.leakage_baseline", "1.0", "leakage per cycle, baseline mode"},
        {"energy.leakage_vespa", "1.0", "leakage per cycle, vespa mode"},
        {"alloc.superpage_probability", "0.5", "chance a 2MB region is backed by one superpage"},
        {"alloc.seed", "1", "allocator seed"},
        {"alloc.physical_frames", "1048576", "physical memory in 4KB frames"},
        {"alloc.enable_1g", "false", "permit 1GB mappings"},
        {"sim.cores", "1", "number of cores"},
        {"sim.miss_penalty", "20", "cycles beyond the L1 lookup on a miss"},
        {"sim.shootdown_cycles", "200", "stall charged per core on a promotion"},
        {"sim.warmup", "0", "references executed before metrics are reset"},
        {"sim.walk_refs", "false", "look up page-walk references in the L1"},
        {"sim.check_data", "true", "check every read against a reference memory"},
        {"sim.sweep_on_promote", "true", "sweep L1s on promotion"},
        {"sim.exclusive_grant", "false", "grant E on unshared read misses (otherwise S)"},
        {"sim.directory_entries", "0", "directory capacity; 0 = unbounded"},
        {"sim.invariant_interval", "0", "protocol invariant scan every K references; 0 = off"},
        {"trace.path", "", "trace file (.trace or .btrace); empty = use the generator"},
        {"gen.model", "uniform", "uniform | hotspot-zipf | stream | pointer-chase"},
        {"gen.footprint", "1048576", "footprint in bytes"},
        {"gen.accesses", "100000", "references per thread"},
        {"gen.zipf_s", "1.0", "zipf exponent"},
        {"gen.stride", "64", "stream stride in bytes"},
        {"gen.base", "0x10000000", "base virtual address"},
        {"gen.write_fraction", "0.0", "fraction of writes"},
        {"gen.instr_per_access", "3.0", "instructions per memory reference"},
        {"gen.threads", "auto", "threads; auto = sim.cores"},
        {"gen.private", "false", "threads use disjoint footprints"},
        {"gen.seed", "1", "generator seed"},
        {"output.csv", "", "CSV output path; empty = stdout"},
        {"output.run_id", "run", "run identifier in the CSV"},
        {"output.baseline_companion", "false", "also run the baseline counterpart in `run`"},
        {"sweep.workers", "0", "parallel sweep points; 0 = hardware concurrency"},
    };
    return k;
}

Config::Config() {
    for (const auto& key : keys()) values_[key.name] = key.default_value;
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
    it->second = value;
}

void Config::load_file(const std::string& path) { load_file(path, 0); }

void Config::load_file(const std::string& path, int depth) {
    if (depth > kMaxIncludeDepth) throw ConfigError(fmt::format("{}: include nesting too deep", path));
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.resize(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("{}:{}: expected key = value", path, line_no));
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "include") {
            std::filesystem::path inc(value);
            if (inc.is_relative()) inc = std::filesystem::path(path).parent_path() / inc;
            load_file(inc.string(), depth + 1);
            continue;
        }
        try {
            set(key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(fmt::format("{}:{}: {}", path, line_no, e.what()));
        }
    }
}

void Config::apply_overrides(const std::vector<std::string>& items) {
    for (std::string item : items) {
        if (item.starts_with("--")) item.erase(0, 2);
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError(fmt::format("override '{}' must have the form --key=value", item));
        set(item.substr(0, eq), item.substr(eq + 1));
    }
}

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(fmt::format("unknown config key '{}'", key));
    return it->second;
}

std::uint64_t Config::get_uint(const std::string& key) const {
    std::string v = get(key);
    int base = 10;
    if (v.starts_with("0x") || v.starts_with("0X")) {
        v.erase(0, 2);
        base = 16;
    }
    std::uint64_t out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out, base);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError(fmt::format("{}: expected an unsigned integer, got '{}'", key, get(key)));
    return out;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = get(key);
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc{} || ptr != v.data() + v.size())
        throw ConfigError(fmt::format("{}: expected a number, got '{}'", key, v));
    return out;
}

bool Config::get_bool(const std::string& key) const {
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError(fmt::format("{}: expected true or false, got '{}'", key, get(key)));
}

std::string Config::render() const {
    std::string out;
    std::string section;
    for (const auto& key : keys()) {
        const std::string prefix = key.name.substr(0, key.name.find('.'));
        if (prefix != section) {
            if (!section.empty()) out += '\n';
            section = prefix;
        }
        out += fmt::format("{} = {}  # {}\n", key.name, values_.at(key.name), key.doc);
    }
    return out;
}

}  // namespace vespa
