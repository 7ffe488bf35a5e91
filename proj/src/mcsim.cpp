#include "vespa/mcsim.hpp"

#include <algorithm>
#include <bit>
#include <deque>
#include <map>

#include <fmt/format.h>

namespace vespa {

namespace {

constexpr std::uint64_t bit(unsigned core) { return std::uint64_t{1} << core; }

}  // namespace

// ---------------------------------------------------------------------------
// Directory

const DirectoryEntry* Directory::find(Addr line) const {
    auto it = entries_.find(line);
    return it == entries_.end() ? nullptr : &it->second.entry;
}

DirectoryEntry* Directory::find(Addr line) {
    auto it = entries_.find(line);
    return it == entries_.end() ? nullptr : &it->second.entry;
}

DirectoryEntry& Directory::obtain(Addr line, std::optional<DirectoryEntry>& evicted) {
    evicted.reset();
    if (auto it = entries_.find(line); it != entries_.end()) return it->second.entry;
    if (capacity_ != 0 && entries_.size() >= capacity_) {
        const Addr victim = order_.front();
        evicted = entries_.at(victim).entry;
        erase(victim);
    }
    order_.push_back(line);
    Slot slot;
    slot.entry.line = line;
    slot.age = std::prev(order_.end());
    return entries_.emplace(line, slot).first->second.entry;
}

void Directory::remove_sharer(Addr line, unsigned core) {
    auto it = entries_.find(line);
    if (it == entries_.end()) return;
    DirectoryEntry& e = it->second.entry;
    e.sharers &= ~bit(core);
    if (e.owner == static_cast<int>(core)) e.owner = -1;
    if (e.sharers == 0) erase(line);
}

void Directory::erase(Addr line) {
    auto it = entries_.find(line);
    if (it == entries_.end()) return;
    order_.erase(it->second.age);
    entries_.erase(it);
}

std::vector<DirectoryEntry> Directory::snapshot() const {
    std::vector<DirectoryEntry> out;
    out.reserve(entries_.size());
    for (const auto& [line, slot] : entries_) out.push_back(slot.entry);
    std::sort(out.begin(), out.end(),
              [](const DirectoryEntry& a, const DirectoryEntry& b) { return a.line < b.line; });
    return out;
}

// ---------------------------------------------------------------------------
// Machine

void MachineConfig::validate() const {
    if (cores < 1 || cores > kMaxCores)
        throw std::invalid_argument(fmt::format("sim.cores={} must be in [1, {}]", cores, kMaxCores));
    cache.validate();
    tlb.validate();
}

Machine::Machine(const MachineConfig& config)
    : config_(config),
      allocator_(config.allocator, config.shootdown_cycles),
      directory_(config.directory_entries) {
    config_.validate();
    const double leak = config_.cache.mode == CacheMode::Vespa
                            ? config_.cache.energy.leakage_power_vespa
                            : config_.cache.energy.leakage_power_baseline;
    for (unsigned c = 0; c < config_.cores; ++c) {
        tlbs_.emplace_back(config_.tlb);
        caches_.emplace_back(config_.cache);
        metrics_.emplace_back(leak);
    }
}

MetricsAccumulator Machine::total_metrics() const {
    MetricsAccumulator total(metrics_.front().leakage_power);
    for (const auto& m : metrics_) total.merge(m);
    return total;
}

void Machine::reset_metrics() {
    for (auto& m : metrics_) m = MetricsAccumulator(m.leakage_power);
}

std::uint64_t Machine::memory_value(Addr line) const {
    auto it = memory_.find(line);
    return it == memory_.end() ? 0 : it->second;
}

void Machine::run(RecordSource& source) {
    std::vector<std::deque<TraceRecord>> queues(config_.cores);
    bool exhausted = false;

    auto route = [&](const TraceRecord& r) {
        const bool os_event = r.kind == RecordKind::Promote || r.kind == RecordKind::Demote;
        const std::uint32_t tid = os_event ? 0 : r.thread_id;
        if (tid >= config_.cores) {
            throw std::invalid_argument(
                fmt::format("trace thread id {} needs sim.cores > {}", tid, config_.cores));
        }
        queues[tid].push_back(r);
    };
    // Pulls from the source until `core` has work or the source is exhausted.
    auto fill = [&](unsigned core) {
        while (queues[core].empty() && !exhausted) {
            if (auto r = source.next()) route(*r);
            else exhausted = true;
        }
        return !queues[core].empty();
    };

    for (;;) {
        bool progressed = false;
        for (unsigned c = 0; c < config_.cores; ++c) {
            while (fill(c)) {
                const TraceRecord r = queues[c].front();
                queues[c].pop_front();
                execute(r);
                progressed = true;
                if (r.is_memory()) break;
            }
        }
        if (!progressed) break;
    }
}

void Machine::execute(const TraceRecord& r) {
    switch (r.kind) {
    case RecordKind::Read:
    case RecordKind::Write:
        if (r.thread_id >= config_.cores) {
            throw std::invalid_argument(
                fmt::format("trace thread id {} needs sim.cores > {}", r.thread_id, config_.cores));
        }
        access(r.thread_id, r.value, r.kind == RecordKind::Write);
        break;
    case RecordKind::InstrCount:
        if (r.thread_id >= config_.cores) {
            throw std::invalid_argument(
                fmt::format("trace thread id {} needs sim.cores > {}", r.thread_id, config_.cores));
        }
        metrics_[r.thread_id].add_instructions(r.value);
        break;
    case RecordKind::Promote: promote(r.value); break;
    case RecordKind::Demote: demote(r.value); break;
    }
}

AccessEvent Machine::access(unsigned core, Addr vaddr, bool is_write) {
    L1Cache& cache = caches_.at(core);
    const TlbResult t = tlbs_[core].probe(vaddr, allocator_);
    if (t.hit_level == TlbLevel::Walk && config_.walk_references) walk_references(core, vaddr, t.page_size);

    AccessEvent ev;
    ev.core = core;
    ev.vaddr = vaddr;
    ev.paddr = t.paddr;
    ev.is_write = is_write;
    ev.page_size = t.page_size;
    ev.tlb_level = t.hit_level;
    ev.outcome = cache.demand_lookup(vaddr, is_write, t);

    const Addr line = line_of(t.paddr);
    const Addr vline = vaddr >> config_.cache.geometry.line_bits;
    if (!is_write) {
        const std::uint64_t value = ev.outcome.hit ? cache.find_line(line)->value
                                                   : read_miss(core, line, vaddr, t.page_size, false);
        if (config_.check_data) {
            auto it = reference_.find(vline);
            const std::uint64_t expected = it == reference_.end() ? 0 : it->second;
            if (value != expected) {
                ev.stale = true;
                ++stats_.stale_reads;
            }
        }
    } else {
        if (!ev.outcome.hit) write_miss(core, line, vaddr, t.page_size);
        else if (ev.outcome.state == CoherenceState::S || ev.outcome.state == CoherenceState::O)
            upgrade(core, line);
        const std::uint64_t token = ++write_token_;
        cache.write_line(line, token);
        DirectoryEntry& e = directory_entry(line);
        e.owner = static_cast<int>(core);
        if (config_.check_data) reference_[vline] = token;
    }

    metrics_[core].accumulate_demand(ev.outcome, config_.miss_penalty_cycles, is_superpage(t.page_size),
                                     is_write);
    ++stats_.references;
    if (config_.warmup_references != 0 && stats_.references == config_.warmup_references) reset_metrics();
    if (config_.invariant_interval != 0 && stats_.references % config_.invariant_interval == 0) {
        ++stats_.invariant_scans;
        check_invariants();
    }
    if (observer_) observer_(ev);
    return ev;
}

DirectoryEntry& Machine::directory_entry(Addr line) {
    std::optional<DirectoryEntry> recalled;
    DirectoryEntry& e = directory_.obtain(line, recalled);
    if (recalled) {
        // Inclusive directory: recalling an entry removes every L1 copy.
        ++stats_.directory_recalls;
        for (unsigned c = 0; c < config_.cores; ++c) {
            if (!(recalled->sharers & bit(c))) continue;
            const ProbeOutcome p = probe(c, recalled->line, ProbeKind::WritebackRequest,
                                         recalled->superpage_backed);
            if (p.dirty_data) memory_[recalled->line] = p.value;
        }
    }
    return e;
}

void Machine::note_holder(DirectoryEntry& e, unsigned core, bool superpage_fill) {
    e.superpage_backed = e.sharers == 0 ? superpage_fill : (e.superpage_backed && superpage_fill);
    e.sharers |= bit(core);
}

ProbeOutcome Machine::probe(unsigned target, Addr line, ProbeKind kind, bool superpage_backed) {
    ProbeOutcome p = caches_[target].coherence_probe(line, kind, superpage_backed);
    metrics_[target].accumulate_probe(p.lookup);
    ++stats_.probes_by_kind[static_cast<std::size_t>(kind)];
    if (!p.lookup.hit) {
        throw ProtocolViolation(fmt::format("directory lists core {} as a sharer of {:#x} but its L1 missed\n{}",
                                            target, line, dump(line)));
    }
    return p;
}

void Machine::install(unsigned core, const FillRequest& req) {
    const EvictionInfo ev = caches_[core].fill(req);
    if (!ev.evicted) return;
    if (ev.writeback) memory_[ev.victim_paddr] = ev.value;
    directory_.remove_sharer(ev.victim_paddr, core);
}

std::uint64_t Machine::read_miss(unsigned core, Addr line, Addr vaddr, PageSize size, bool bypass) {
    DirectoryEntry& e = directory_entry(line);
    std::uint64_t value;
    if (e.owner >= 0 && e.owner != static_cast<int>(core)) {
        const auto owner = static_cast<unsigned>(e.owner);
        const ProbeOutcome p = probe(owner, line, ProbeKind::RemoteRead, e.superpage_backed);
        value = p.value;
        if (p.prior_state == CoherenceState::E) e.owner = -1;  // E -> S
    } else {
        value = memory_value(line);
    }
    FillRequest req;
    req.paddr = line;
    req.vaddr = vaddr;
    req.page_size = size;
    req.value = value;
    req.bypass = bypass;
    const bool alone = e.sharers == 0;
    req.state = alone && config_.exclusive_grant ? CoherenceState::E : CoherenceState::S;
    const bool single_bank_fill = bypass || is_superpage(size);
    note_holder(e, core, single_bank_fill);
    if (req.state == CoherenceState::E) e.owner = static_cast<int>(core);
    install(core, req);
    return value;
}

void Machine::write_miss(unsigned core, Addr line, Addr vaddr, PageSize size) {
    DirectoryEntry& e = directory_entry(line);
    std::uint64_t value = memory_value(line);
    for (unsigned c = 0; c < config_.cores; ++c) {
        if (c == core || !(e.sharers & bit(c))) continue;
        const ProbeOutcome p = probe(c, line, ProbeKind::Invalidate, e.superpage_backed);
        if (p.supplied_data) value = p.value;
    }
    e.sharers = 0;
    e.owner = static_cast<int>(core);
    note_holder(e, core, is_superpage(size));
    FillRequest req;
    req.paddr = line;
    req.vaddr = vaddr;
    req.page_size = size;
    req.state = CoherenceState::M;
    req.value = value;
    install(core, req);
}

void Machine::upgrade(unsigned core, Addr line) {
    DirectoryEntry* e = directory_.find(line);
    if (!e) throw ProtocolViolation(fmt::format("upgrade of {:#x} without a directory entry", line));
    for (unsigned c = 0; c < config_.cores; ++c) {
        if (c == core || !(e->sharers & bit(c))) continue;
        probe(c, line, ProbeKind::Invalidate, e->superpage_backed);
    }
    e->sharers = bit(core);
    e->owner = static_cast<int>(core);
}

void Machine::walk_references(unsigned core, Addr vaddr, PageSize size) {
    for (unsigned level = 0; level < PageAllocator::walk_levels(size); ++level) {
        const Addr line = line_of(allocator_.page_table_entry_paddr(vaddr, level));
        const LookupOutcome o = caches_[core].bypass_lookup(line);
        metrics_[core].accumulate_walk(o);
        if (!o.hit) read_miss(core, line, line, PageSize::Base4K, true);
    }
}

void Machine::promote(Addr region_base) {
    if (auto m = allocator_.mapping_for(region_base); m && is_superpage(m->size)) {
        ++stats_.ignored_promotions;
        return;
    }
    allocator_.populate_region(region_base);
    if (auto m = allocator_.mapping_for(region_base); m && is_superpage(m->size)) {
        ++stats_.ignored_promotions;  // first touch picked a superpage
        return;
    }
    const PromotionEvent event = allocator_.promote(region_base);
    ++stats_.promotions;

    for (unsigned c = 0; c < config_.cores; ++c) {
        tlbs_[c].invalidate_region(region_base);
        SweepReport report;
        report.stall_cycles = event.shootdown_cycles;
        if (config_.sweep_on_promote) {
            report = caches_[c].sweep_for_promotion(event);
            for (const auto& line : report.evicted) {
                if (line.dirty) memory_[line.paddr] = line.value;
                directory_.remove_sharer(line.paddr, c);
            }
        }
        metrics_[c].accumulate_sweep(report);
    }

    // Copy the data image to the new frames.
    const Addr line_bytes = config_.cache.geometry.line_bytes;
    for (std::size_t i = 0; i < event.old_pairs.size(); ++i) {
        const Addr from = event.old_pairs[i].second << 12;
        const Addr to = (event.new_pfn + i) << 12;
        for (Addr off = 0; off < 4096; off += line_bytes) {
            auto it = memory_.find(from + off);
            if (it == memory_.end()) {
                memory_.erase(to + off);
                continue;
            }
            const std::uint64_t v = it->second;
            memory_.erase(it);
            memory_[to + off] = v;
        }
    }
}

void Machine::demote(Addr region_base) {
    auto m = allocator_.mapping_for(region_base);
    if (!m || m->size != PageSize::Super2M) {
        ++stats_.ignored_demotions;
        return;
    }
    allocator_.demote(region_base);
    ++stats_.demotions;
    for (auto& tlb : tlbs_) tlb.invalidate_region(region_base);
}

std::string Machine::dump(Addr line) const {
    std::string out = fmt::format("after {} references, line {:#x}:\n", stats_.references, line);
    for (unsigned c = 0; c < config_.cores; ++c) {
        const CacheLine* l = caches_[c].find_line(line);
        if (l) {
            out += fmt::format("  core {}: {}{} value={}\n", c, to_string(l->state), l->dirty ? " dirty" : "",
                               l->value);
        }
    }
    if (const DirectoryEntry* e = directory_.find(line)) {
        out += fmt::format("  directory: sharers={:#x} owner={} superpage_backed={}\n", e->sharers, e->owner,
                           e->superpage_backed);
    } else {
        out += "  directory: no entry\n";
    }
    return out;
}

void Machine::check_invariants() const {
    struct Holders {
        std::uint64_t mask = 0;
        unsigned modified = 0;
        unsigned owned = 0;
        unsigned exclusive = 0;
        int owner = -1;
        bool values_differ = false;
        std::uint64_t value = 0;
    };
    std::map<Addr, Holders> lines;
    for (unsigned c = 0; c < config_.cores; ++c) {
        try {
            caches_[c].check_invariants();
        } catch (const InvariantViolation& e) {
            throw ProtocolViolation(fmt::format("core {}: {}", c, e.what()));
        }
        caches_[c].for_each_valid_line([&](const CacheLine& l) {
            Holders& h = lines[l.resident_paddr];
            if (h.mask != 0 && h.value != l.value) h.values_differ = true;
            h.value = l.value;
            h.mask |= bit(c);
            if (l.state == CoherenceState::M) ++h.modified;
            if (l.state == CoherenceState::O) ++h.owned;
            if (l.state == CoherenceState::E) ++h.exclusive;
            if (is_owner_state(l.state)) h.owner = static_cast<int>(c);
        });
    }

    for (const auto& [line, h] : lines) {
        auto fail = [&, line = line](const std::string& why) {
            throw ProtocolViolation(fmt::format("{}\n{}", why, dump(line)));
        };
        const unsigned holders = static_cast<unsigned>(std::popcount(h.mask));
        if (h.modified > 1) fail("two caches hold the line in M");
        if (h.modified + h.owned + h.exclusive > 1) fail("more than one owner");
        if ((h.modified || h.exclusive) && holders > 1) fail("M/E copy coexists with other copies");
        if (config_.check_data && h.values_differ) fail("valid copies disagree on data");
        const DirectoryEntry* e = directory_.find(line);
        if (!e) fail("cached line has no directory entry");
        if (e->sharers != h.mask) fail("directory sharer vector disagrees with L1 contents");
        if (e->owner != h.owner) fail("directory owner disagrees with L1 states");
    }
    for (const auto& e : directory_.snapshot()) {
        if (!lines.contains(e.line)) {
            throw ProtocolViolation(fmt::format("directory entry for uncached line\n{}", dump(e.line)));
        }
    }
}

// ---------------------------------------------------------------------------
// Reporting

std::optional<double> CoherenceEnergyReport::energy_per_probe() const {
    if (probes == 0) return std::nullopt;
    return total_energy / static_cast<double>(probes);
}

CoherenceEnergyReport coherence_energy_report(const Machine& machine) {
    CoherenceEnergyReport r;
    const auto& cfg = machine.config().cache;
    const double full = lookup_energy(cfg.energy, cfg.geometry.total_ways, false);
    for (unsigned c = 0; c < machine.cores(); ++c) {
        const MetricsAccumulator& m = machine.metrics(c);
        r.per_core_energy.push_back(m.coherence_probe_energy);
        r.per_core_probes.push_back(m.coherence_probes);
        r.total_energy += m.coherence_probe_energy;
        r.probes += m.coherence_probes;
        if (m.ways_probe.total() != m.ways_probe.at(cfg.geometry.ways_per_bank)) r.all_single_bank = false;
    }
    r.baseline_equivalent_energy = full * static_cast<double>(r.probes);
    return r;
}

std::optional<double> per_probe_reduction(const CoherenceEnergyReport& candidate,
                                          const CoherenceEnergyReport& baseline) {
    const auto a = candidate.energy_per_probe();
    const auto b = baseline.energy_per_probe();
    if (!a || !b || *b == 0.0) return std::nullopt;
    return 1.0 - *a / *b;
}

}  // namespace vespa
