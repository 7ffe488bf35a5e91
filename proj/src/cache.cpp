#include "vespa/cache.hpp"

#include <algorithm>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>

namespace vespa {

const char* to_string(CoherenceState state) {
    switch (state) {
    case CoherenceState::I: return "I";
    case CoherenceState::S: return "S";
    case CoherenceState::E: return "E";
    case CoherenceState::O: return "O";
    case CoherenceState::M: return "M";
    }
    return "?";
}

const char* to_string(CacheMode mode) { return mode == CacheMode::Vespa ? "vespa" : "baseline"; }

const char* to_string(InsertionPolicy policy) {
    switch (policy) {
    case InsertionPolicy::FourWay: return "fourway";
    case InsertionPolicy::FourEightWay: return "foureightway";
    case InsertionPolicy::BaselineGlobal: return "baseline";
    }
    return "?";
}

const char* to_string(ProbeKind kind) {
    switch (kind) {
    case ProbeKind::Invalidate: return "invalidate";
    case ProbeKind::RemoteRead: return "remote_read";
    case ProbeKind::WritebackRequest: return "writeback_request";
    }
    return "?";
}

void CacheConfig::validate() const {
    if (mode == CacheMode::Vespa && policy == InsertionPolicy::BaselineGlobal)
        throw std::invalid_argument("policy=baseline is only legal in baseline mode");
    if (mode == CacheMode::Baseline && policy != InsertionPolicy::BaselineGlobal)
        throw std::invalid_argument(
            fmt::format("policy={} requires vespa mode", to_string(policy)));
    energy.validate();
}

L1Cache::L1Cache(const CacheConfig& config) : config_(config) {
    config_.validate();
    const auto& g = config_.geometry;
    lines_.resize(std::size_t{g.num_sets} * g.total_ways);
    group_ways_ = banked_mode() ? g.ways_per_bank : g.total_ways;
    groups_per_set_ = g.total_ways / group_ways_;
    mru_.assign(std::size_t{g.num_sets} * groups_per_set_, -1);
}

unsigned L1Cache::set_of(Addr address) const {
    const auto& g = config_.geometry;
    return static_cast<unsigned>((address >> g.line_bits) & (g.num_sets - 1));
}

unsigned L1Cache::bank_of(Addr address) const {
    const auto& g = config_.geometry;
    return static_cast<unsigned>((address >> (g.line_bits + g.set_bits)) & (g.num_banks - 1));
}

unsigned L1Cache::group_of_way(unsigned way) const { return way / group_ways_; }

int L1Cache::find_in_ways(unsigned set, Addr tag, unsigned first_way, unsigned count) const {
    const CacheLine* s = set_begin(set);
    for (unsigned w = first_way; w < first_way + count; ++w) {
        if (s[w].valid() && s[w].tag == tag) return static_cast<int>(w);
    }
    return -1;
}

int L1Cache::find_way(Addr paddr) const {
    const auto& g = config_.geometry;
    return find_in_ways(set_of(paddr), paddr >> g.line_bits, 0, g.total_ways);
}

const CacheLine* L1Cache::find_line(Addr paddr) const {
    const int w = find_way(paddr);
    return w < 0 ? nullptr : &set_begin(set_of(paddr))[w];
}

void L1Cache::touch(unsigned set, unsigned way) {
    set_begin(set)[way].lru_stamp = ++stamp_;
    if (config_.way_prediction)
        mru_[std::size_t{set} * groups_per_set_ + group_of_way(way)] = static_cast<std::int16_t>(way);
}

std::optional<unsigned> L1Cache::predict_way(unsigned set_index, unsigned bank_index) const {
    const unsigned group = banked_mode() ? bank_index : 0;
    const std::int16_t w = mru_[std::size_t{set_index} * groups_per_set_ + group];
    if (w < 0) return std::nullopt;
    return static_cast<unsigned>(w);
}

void L1Cache::apply_way_prediction(LookupOutcome& out, unsigned set, unsigned group,
                                   unsigned ways_without_prediction) {
    const auto predicted = predict_way(set, group);
    if (!predicted) return;  // cold group: plain read of the normal ways
    out.way_predicted = true;
    ++stats_.predictions;
    if (out.hit && static_cast<unsigned>(out.way) == *predicted) {
        out.prediction_correct = true;
        ++stats_.predictions_correct;
        out.ways_read = 1;
    } else {
        out.ways_read = ways_without_prediction;
        out.latency_cycles += config_.mispredict_penalty_cycles;
    }
}

LookupOutcome L1Cache::demand_lookup(Addr vaddr, bool is_write, const TlbResult& tlb) {
    (void)is_write;
    const auto& g = config_.geometry;
    const unsigned set = set_of(vaddr);
    const unsigned va_bank = bank_of(vaddr);
    const Addr tag = tlb.paddr >> g.line_bits;

    LookupOutcome out;
    const unsigned full_path_latency = std::max(tlb.full_resolution_cycle, g.latency_base_cycles);

    if (!banked_mode()) {
        out.way = find_in_ways(set, tag, 0, g.total_ways);
        out.hit = out.way >= 0;
        out.banks_probed = g.num_banks;
        out.ways_read = g.total_ways;
        out.latency_cycles = full_path_latency;
        ++stats_.full_path_lookups;
        if (config_.way_prediction) apply_way_prediction(out, set, 0, g.total_ways);
    } else if (tlb.superpage_signal()) {
        // Speculation confirmed: only the VA-selected bank is read.
        out.way = find_in_ways(set, tag, va_bank * g.ways_per_bank, g.ways_per_bank);
        out.hit = out.way >= 0;
        out.banks_probed = 1;
        out.ways_read = g.ways_per_bank;
        out.latency_cycles = g.latency_super_cycles;
        out.speculation_correct = true;
        ++stats_.superpage_path_lookups;
        if (config_.way_prediction)
            apply_way_prediction(out, set, va_bank, g.ways_per_bank);
    } else {
        // The superpage TLBs missed: the remaining banks are read in the next
        // cycle and the tag compare waits for the physical address.
        out.way = find_in_ways(set, tag, 0, g.total_ways);
        out.hit = out.way >= 0;
        out.banks_probed = g.num_banks;
        out.ways_read = g.total_ways;
        out.latency_cycles = full_path_latency;
        ++stats_.full_path_lookups;
        if (config_.way_prediction)
            apply_way_prediction(out, set, va_bank, g.total_ways);
    }

    if (out.hit) {
        out.state = set_begin(set)[out.way].state;
        touch(set, static_cast<unsigned>(out.way));
        ++stats_.demand_hits;
    } else {
        ++stats_.demand_misses;
    }
    out.dynamic_energy = lookup_energy(config_.energy, out.ways_read, banked_mode());
    stats_.ways_read += out.ways_read;
    return out;
}

LookupOutcome L1Cache::bypass_lookup(Addr paddr) {
    const auto& g = config_.geometry;
    const unsigned set = set_of(paddr);
    const Addr tag = paddr >> g.line_bits;
    LookupOutcome out;
    if (banked_mode()) {
        out.way = find_in_ways(set, tag, bank_of(paddr) * g.ways_per_bank, g.ways_per_bank);
        out.banks_probed = 1;
        out.ways_read = g.ways_per_bank;
        out.latency_cycles = g.latency_super_cycles;
        out.speculation_correct = true;
    } else {
        out.way = find_in_ways(set, tag, 0, g.total_ways);
        out.banks_probed = g.num_banks;
        out.ways_read = g.total_ways;
        out.latency_cycles = g.latency_base_cycles;
    }
    out.hit = out.way >= 0;
    if (out.hit) {
        out.state = set_begin(set)[out.way].state;
        touch(set, static_cast<unsigned>(out.way));
    }
    out.dynamic_energy = lookup_energy(config_.energy, out.ways_read, banked_mode());
    ++stats_.bypass_lookups;
    stats_.ways_read += out.ways_read;
    return out;
}

unsigned L1Cache::pick_victim(unsigned set, unsigned first_way, unsigned count) const {
    const CacheLine* s = set_begin(set);
    for (unsigned w = first_way; w < first_way + count; ++w)
        if (!s[w].valid()) return w;
    unsigned victim = first_way;
    for (unsigned w = first_way + 1; w < first_way + count; ++w)
        if (s[w].lru_stamp < s[victim].lru_stamp) victim = w;
    return victim;
}

EvictionInfo L1Cache::fill(const FillRequest& req) {
    const auto& g = config_.geometry;
    const unsigned set = set_of(req.paddr);
    const Addr tag = req.paddr >> g.line_bits;
    if (find_in_ways(set, tag, 0, g.total_ways) >= 0) {
        throw InvariantViolation(fmt::format("fill of resident line {:#x}", req.paddr));
    }

    unsigned first = 0;
    unsigned count = g.total_ways;
    const bool superpage_fill = req.bypass || is_superpage(req.page_size);
    switch (config_.policy) {
    case InsertionPolicy::FourWay:
        first = bank_of(req.paddr) * g.ways_per_bank;
        count = g.ways_per_bank;
        break;
    case InsertionPolicy::FourEightWay:
        if (superpage_fill) {
            // VA and PA bank bits agree inside a superpage; bypass fills use the PA.
            first = bank_of(req.bypass ? req.paddr : req.vaddr) * g.ways_per_bank;
            count = g.ways_per_bank;
        }
        break;
    case InsertionPolicy::BaselineGlobal: break;
    }

    const unsigned way = pick_victim(set, first, count);
    CacheLine& line = set_begin(set)[way];
    EvictionInfo info;
    info.way = way;
    if (line.valid()) {
        info.evicted = true;
        info.victim_paddr = line.tag << g.line_bits;
        info.victim_state = line.state;
        info.writeback = line.dirty;
        info.value = line.value;
        ++stats_.evictions;
        if (line.dirty) ++stats_.writebacks;
    }
    line.tag = tag;
    line.state = req.state;
    line.dirty = req.dirty;
    line.resident_paddr = req.paddr & ~Addr{g.line_bytes - 1u};
    line.value = req.value;
    touch(set, way);
    ++stats_.fills;
    return info;
}

ProbeOutcome L1Cache::coherence_probe(Addr paddr, ProbeKind kind, bool superpage_backed) {
    const auto& g = config_.geometry;
    const unsigned set = set_of(paddr);
    const Addr tag = paddr >> g.line_bits;

    bool single_bank = false;
    if (banked_mode()) {
        single_bank = config_.policy == InsertionPolicy::FourWay ||
                      (config_.policy == InsertionPolicy::FourEightWay && superpage_backed);
    }

    ProbeOutcome result;
    LookupOutcome& out = result.lookup;
    if (single_bank) {
        out.way = find_in_ways(set, tag, bank_of(paddr) * g.ways_per_bank, g.ways_per_bank);
        out.banks_probed = 1;
        out.ways_read = g.ways_per_bank;
        out.latency_cycles = g.latency_super_cycles;
    } else {
        out.way = find_in_ways(set, tag, 0, g.total_ways);
        out.banks_probed = g.num_banks;
        out.ways_read = g.total_ways;
        out.latency_cycles = g.latency_base_cycles;
    }
    out.dynamic_energy = lookup_energy(config_.energy, out.ways_read, banked_mode());
    out.hit = out.way >= 0;
    ++stats_.probes;
    stats_.probe_ways_read += out.ways_read;
    if (!out.hit) return result;

    ++stats_.probe_hits;
    CacheLine& line = set_begin(set)[out.way];
    result.prior_state = line.state;
    out.state = line.state;
    result.dirty_data = line.dirty;
    result.value = line.value;

    switch (kind) {
    case ProbeKind::Invalidate:
    case ProbeKind::WritebackRequest:
        result.supplied_data = line.dirty;
        line.state = CoherenceState::I;
        line.dirty = false;
        break;
    case ProbeKind::RemoteRead:
        result.supplied_data = is_owner_state(line.state);
        if (line.state == CoherenceState::M) line.state = CoherenceState::O;
        else if (line.state == CoherenceState::E) line.state = CoherenceState::S;
        break;
    }
    return result;
}

SweepReport L1Cache::sweep_for_promotion(const PromotionEvent& event) {
    std::unordered_set<Addr> retired;
    retired.reserve(event.old_pairs.size() * 2);
    for (const auto& [vpn, pfn] : event.old_pairs) retired.insert(pfn);

    SweepReport report;
    report.stall_cycles = event.shootdown_cycles;
    for (auto& line : lines_) {
        if (!line.valid() || !retired.contains(line.resident_paddr >> 12)) continue;
        report.evicted.push_back({line.resident_paddr, line.dirty, line.value});
        ++report.lines_evicted;
        if (line.dirty) ++report.writebacks;
        line.state = CoherenceState::I;
        line.dirty = false;
    }
    ++stats_.sweeps;
    stats_.swept_lines += report.lines_evicted;
    stats_.writebacks += report.writebacks;
    return report;
}

void L1Cache::set_state(Addr paddr, CoherenceState state) {
    const int w = find_way(paddr);
    if (w < 0) throw InvariantViolation(fmt::format("set_state on absent line {:#x}", paddr));
    CacheLine& line = set_begin(set_of(paddr))[w];
    line.state = state;
    if (state != CoherenceState::M && state != CoherenceState::O) line.dirty = false;
}

void L1Cache::write_line(Addr paddr, std::uint64_t value) {
    const int w = find_way(paddr);
    if (w < 0) throw InvariantViolation(fmt::format("write to absent line {:#x}", paddr));
    CacheLine& line = set_begin(set_of(paddr))[w];
    line.state = CoherenceState::M;
    line.dirty = true;
    line.value = value;
}

void L1Cache::invalidate(Addr paddr) {
    const int w = find_way(paddr);
    if (w < 0) return;
    CacheLine& line = set_begin(set_of(paddr))[w];
    line.state = CoherenceState::I;
    line.dirty = false;
}

void L1Cache::check_invariants() const {
    const auto& g = config_.geometry;
    std::unordered_map<Addr, std::size_t> seen;
    for (std::size_t i = 0; i < lines_.size(); ++i) {
        const CacheLine& line = lines_[i];
        if (!line.valid()) continue;
        if (line.dirty && line.state != CoherenceState::M && line.state != CoherenceState::O) {
            throw InvariantViolation(fmt::format("dirty line {:#x} in state {}",
                                                 line.tag << g.line_bits, to_string(line.state)));
        }
        if (auto [it, fresh] = seen.emplace(line.tag, i); !fresh) {
            throw InvariantViolation(fmt::format("line {:#x} resident twice (slots {} and {})",
                                                 line.tag << g.line_bits, it->second, i));
        }
        if ((line.resident_paddr >> g.line_bits) != line.tag)
            throw InvariantViolation("resident_paddr disagrees with tag");
    }
}

}  // namespace vespa
