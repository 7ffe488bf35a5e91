#include "vespa/experiment.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <thread>

#include <fmt/format.h>

namespace vespa {

namespace {

// Config key behind a GeometryError message.
const char* geometry_key(std::string_view what) {
    if (what.starts_with("capacity_bytes")) return "cache.capacity_kb";
    if (what.starts_with("line_bytes=")) return "cache.line_bytes";
    if (what.starts_with("ways_per_bank")) return "cache.ways_per_bank";
    if (what.starts_with("frequency")) return "cache.frequency_ghz";
    if (what.starts_with("latenc")) return "cache.latency_base/cache.latency_super";
    return "cache.ways";  // total_ways and the set-count bounds
}

std::string opt(const std::optional<double>& v) { return v ? fmt::format("{:.6f}", *v) : std::string{}; }

CacheMode parse_mode(const std::string& s) {
    if (s == "vespa") return CacheMode::Vespa;
    if (s == "baseline") return CacheMode::Baseline;
    throw ConfigError(fmt::format("cache.mode: expected vespa or baseline, got '{}'", s));
}

InsertionPolicy parse_policy(const std::string& s) {
    if (s == "fourway" || s == "4way") return InsertionPolicy::FourWay;
    if (s == "foureightway" || s == "4way-8way") return InsertionPolicy::FourEightWay;
    if (s == "baseline") return InsertionPolicy::BaselineGlobal;
    throw ConfigError(fmt::format("cache.policy: expected fourway, foureightway or baseline, got '{}'", s));
}

unsigned narrow(const Config& c, const std::string& key) {
    const std::uint64_t v = c.get_uint(key);
    if (v > 0xFFFFFFFFu) throw ConfigError(fmt::format("{}: value {} is too large", key, v));
    return static_cast<unsigned>(v);
}

std::string policy_label(const MachineConfig& m) {
    std::string label = m.cache.mode == CacheMode::Baseline ? "baseline" : to_string(m.cache.policy);
    if (m.cache.way_prediction) label += "+waypred";
    return label;
}

}  // namespace

std::unique_ptr<RecordSource> RunConfig::open_source() const {
    if (!trace_path.empty()) return std::make_unique<FileSource>(trace_path);
    return std::make_unique<GeneratorSource>(generator);
}

RunConfig build_run_config(const Config& c) {
    RunConfig rc;
    rc.run_id = c.get("output.run_id");
    if (rc.run_id.find_first_of(",\n") != std::string::npos)
        throw ConfigError("output.run_id: must not contain commas or newlines");

    // Geometry.
    const std::uint64_t capacity_kb = c.get_uint("cache.capacity_kb");
    const unsigned line_bytes = narrow(c, "cache.line_bytes");
    const double freq = c.get_double("cache.frequency_ghz");
    unsigned ways = 0;
    if (c.is_auto("cache.ways")) {
        ways = static_cast<unsigned>(capacity_kb * 1024 / 4096);
        if (ways == 0) throw ConfigError("cache.ways: auto needs cache.capacity_kb >= 4");
    } else {
        ways = narrow(c, "cache.ways");
    }
    const unsigned wpb = narrow(c, "cache.ways_per_bank");

    // Shape first, so a bad capacity is reported as such rather than as a missing latency row.
    try {
        derive_geometry(capacity_kb * 1024, line_bytes, ways, wpb, freq, 1, 1);
    } catch (const GeometryError& e) {
        throw ConfigError(fmt::format("{}: {}", geometry_key(e.what()), e.what()));
    }

    const std::string table_path = c.get("cache.latency_table");
    const LatencyTable table = table_path.empty() ? LatencyTable::defaults() : LatencyTable::from_csv(table_path);
    const auto row = table.find(capacity_kb, freq);
    auto latency = [&](const char* key, unsigned LatencyRow::*field) -> unsigned {
        if (!c.is_auto(key)) return narrow(c, key);
        if (!row) {
            throw ConfigError(fmt::format(
                "{}: no latency-table row for {}KB at {}GHz; set the latency explicitly", key, capacity_kb, freq));
        }
        return (*row).*field;
    };
    const unsigned l1_base = latency("cache.latency_base", &LatencyRow::l1_base_cycles);
    const unsigned l1_super = latency("cache.latency_super", &LatencyRow::l1_super_cycles);

    MachineConfig& m = rc.machine;
    try {
        m.cache.geometry = derive_geometry(capacity_kb * 1024, line_bytes, ways, wpb, freq, l1_base, l1_super);
    } catch (const GeometryError& e) {
        throw ConfigError(fmt::format("{}: {}", geometry_key(e.what()), e.what()));
    }

    m.cache.mode = parse_mode(c.get("cache.mode"));
    const std::string policy = c.get("cache.policy");
    if (policy == "auto") {
        m.cache.policy = m.cache.mode == CacheMode::Vespa ? InsertionPolicy::FourWay : InsertionPolicy::BaselineGlobal;
    } else {
        m.cache.policy = parse_policy(policy);
    }
    if (!m.cache.geometry.banked()) {
        // One bank is a baseline VIPT cache whatever the mode says.
        m.cache.mode = CacheMode::Baseline;
        m.cache.policy = InsertionPolicy::BaselineGlobal;
    }
    if (m.cache.mode == CacheMode::Vespa && m.cache.policy == InsertionPolicy::BaselineGlobal)
        throw ConfigError("cache.policy: baseline is only legal with cache.mode=baseline");
    if (m.cache.mode == CacheMode::Baseline && m.cache.policy != InsertionPolicy::BaselineGlobal)
        throw ConfigError(fmt::format("cache.policy: {} needs cache.mode=vespa", to_string(m.cache.policy)));
    m.cache.way_prediction = c.get_bool("cache.way_prediction");
    m.cache.mispredict_penalty_cycles = narrow(c, "cache.mispredict_penalty");

    // Energy.
    const double e_way = c.get_double("energy.e_way");
    const double factor = c.get_double("energy.decoder_factor");
    try {
        if (c.is_auto("energy.e_fixed")) {
            m.cache.energy = EnergyTable::derived(c.get_double("energy.target_reduction"), factor - 1.0, 4, 8, e_way);
        } else {
            m.cache.energy.e_way = e_way;
            m.cache.energy.e_fixed = c.get_double("energy.e_fixed");
            m.cache.energy.vespa_decoder_factor = factor;
        }
        m.cache.energy.leakage_power_baseline = c.get_double("energy.leakage_baseline");
        m.cache.energy.leakage_power_vespa = c.get_double("energy.leakage_vespa");
        m.cache.energy.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    // TLB.
    m.tlb.entries_4k = narrow(c, "tlb.entries_4k");
    m.tlb.entries_2m = narrow(c, "tlb.entries_2m");
    m.tlb.entries_1g = narrow(c, "tlb.entries_1g");
    m.tlb.entries_l2 = narrow(c, "tlb.entries_l2");
    m.tlb.latency_base_cycles = c.is_auto("tlb.latency_base") ? (row ? row->tlb_base_cycles : l1_base)
                                                              : narrow(c, "tlb.latency_base");
    m.tlb.latency_super_cycles = c.is_auto("tlb.latency_super") ? (row ? row->tlb_super_cycles : l1_super)
                                                                : narrow(c, "tlb.latency_super");
    m.tlb.l2_latency_cycles = narrow(c, "tlb.l2_latency");
    m.tlb.walk_latency_cycles = narrow(c, "tlb.walk_latency");
    try {
        m.tlb.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }

    // Allocator and machine.
    m.allocator.superpage_probability = c.get_double("alloc.superpage_probability");
    if (!(m.allocator.superpage_probability >= 0.0 && m.allocator.superpage_probability <= 1.0)) {
        throw ConfigError(fmt::format("alloc.superpage_probability: {} is outside [0,1]",
                                      m.allocator.superpage_probability));
    }
    m.allocator.rng_seed = c.get_uint("alloc.seed");
    m.allocator.physical_frames = c.get_uint("alloc.physical_frames");
    if (m.allocator.physical_frames / kFramesPer2M <= 4)
        throw ConfigError("alloc.physical_frames: need more than 2048 frames");
    m.allocator.enable_1g = c.get_bool("alloc.enable_1g");
    m.cores = narrow(c, "sim.cores");
    if (m.cores < 1 || m.cores > kMaxCores)
        throw ConfigError(fmt::format("sim.cores: {} is outside [1, {}]", m.cores, kMaxCores));
    m.miss_penalty_cycles = narrow(c, "sim.miss_penalty");
    m.shootdown_cycles = c.get_uint("sim.shootdown_cycles");
    m.warmup_references = c.get_uint("sim.warmup");
    m.walk_references = c.get_bool("sim.walk_refs");
    m.check_data = c.get_bool("sim.check_data");
    m.sweep_on_promote = c.get_bool("sim.sweep_on_promote");
    m.exclusive_grant = c.get_bool("sim.exclusive_grant");
    m.directory_entries = c.get_uint("sim.directory_entries");
    m.invariant_interval = c.get_uint("sim.invariant_interval");

    // Workload.
    rc.trace_path = c.get("trace.path");
    GeneratorSpec& g = rc.generator;
    try {
        g.model = parse_generator_model(c.get("gen.model"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(fmt::format("gen.model: {}", e.what()));
    }
    g.footprint_bytes = c.get_uint("gen.footprint");
    g.accesses = c.get_uint("gen.accesses");
    g.zipf_exponent = c.get_double("gen.zipf_s");
    g.stride_bytes = c.get_uint("gen.stride");
    g.base_vaddr = c.get_uint("gen.base");
    g.write_fraction = c.get_double("gen.write_fraction");
    g.instr_per_access = c.get_double("gen.instr_per_access");
    g.threads = c.is_auto("gen.threads") ? m.cores : narrow(c, "gen.threads");
    g.private_footprints = c.get_bool("gen.private");
    g.seed = c.get_uint("gen.seed");
    if (rc.trace_path.empty()) {
        try {
            g.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (g.threads > m.cores)
            throw ConfigError(fmt::format("gen.threads: {} threads need sim.cores >= {}", g.threads, g.threads));
    }

    rc.output_csv = c.get("output.csv");
    rc.baseline_companion = c.get_bool("output.baseline_companion");
    rc.sweep_workers = narrow(c, "sweep.workers");
    return rc;
}

RunConfig baseline_counterpart(const RunConfig& config) {
    RunConfig b = config;
    b.machine.cache.mode = CacheMode::Baseline;
    b.machine.cache.policy = InsertionPolicy::BaselineGlobal;
    b.machine.cache.way_prediction = false;
    b.baseline_companion = false;
    return b;
}

namespace {

RunResult run_one(const RunConfig& config) {
    Machine machine(config.machine);
    auto source = config.open_source();
    machine.run(*source);

    RunResult r;
    r.run_id = config.run_id;
    r.geometry = config.machine.cache.geometry.label();
    r.policy = policy_label(config.machine);
    r.superpage_probability = config.machine.allocator.superpage_probability;
    r.latency_base_cycles = config.machine.cache.geometry.latency_base_cycles;
    r.latency_super_cycles = config.machine.cache.geometry.latency_super_cycles;
    for (unsigned c = 0; c < machine.cores(); ++c) r.per_core.push_back(machine.metrics(c));
    r.total = machine.total_metrics();
    r.stats = machine.stats();
    r.coherence = coherence_energy_report(machine);
    return r;
}

}  // namespace

RunResult run_experiment(const RunConfig& config) {
    RunResult r = run_one(config);
    if (config.baseline_companion) {
        RunResult b = run_one(baseline_counterpart(config));
        r.baseline_per_core = std::move(b.per_core);
        r.baseline_total = b.total;
    }
    return r;
}

SweepAxis parse_sweep_axis(const std::string& name) {
    if (name == "probability") return SweepAxis::Probability;
    if (name == "geometry") return SweepAxis::Geometry;
    if (name == "policy") return SweepAxis::Policy;
    throw ConfigError(fmt::format("unknown sweep axis '{}' (probability|geometry|policy)", name));
}

const char* to_string(SweepAxis axis) {
    switch (axis) {
    case SweepAxis::Probability: return "probability";
    case SweepAxis::Geometry: return "geometry";
    case SweepAxis::Policy: return "policy";
    }
    return "?";
}

namespace {

void apply_axis(Config& c, SweepAxis axis, const std::string& value) {
    switch (axis) {
    case SweepAxis::Probability: c.set("alloc.superpage_probability", value); break;
    case SweepAxis::Geometry: {
        std::string v = value;
        for (const char* suffix : {"kB", "KB", "kb", "k", "K"}) {
            if (v.ends_with(suffix)) {
                v.resize(v.size() - std::char_traits<char>::length(suffix));
                break;
            }
        }
        c.set("cache.capacity_kb", v);
        c.set("cache.ways", "auto");
        break;
    }
    case SweepAxis::Policy: {
        std::string v = value;
        bool waypred = false;
        if (v.ends_with("+waypred")) {
            waypred = true;
            v.resize(v.size() - 8);
        }
        c.set("cache.mode", v == "baseline" ? "baseline" : "vespa");
        c.set("cache.policy", v);
        c.set("cache.way_prediction", waypred ? "true" : "false");
        break;
    }
    }
}

}  // namespace

std::vector<RunResult> sweep(const Config& base, SweepAxis axis, const std::vector<std::string>& values,
                             unsigned workers) {
    if (values.empty()) throw ConfigError(fmt::format("sweep over {} needs at least one value", to_string(axis)));

    std::vector<RunConfig> points;
    for (const auto& v : values) {
        Config c = base;
        try {
            apply_axis(c, axis, v);
            RunConfig rc = build_run_config(c);
            rc.run_id = fmt::format("{}:{}={}", rc.run_id, to_string(axis), v);
            rc.baseline_companion = true;
            points.push_back(std::move(rc));
        } catch (const std::exception& e) {
            throw ConfigError(fmt::format("sweep value '{}': {}", v, e.what()));
        }
    }

    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min<unsigned>(workers, static_cast<unsigned>(points.size()));

    std::vector<std::optional<RunResult>> results(points.size());
    std::vector<std::exception_ptr> errors(points.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < points.size(); i = next++) {
            try {
                results[i] = run_experiment(points[i]);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::vector<RunResult> out;
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (errors[i]) {
            try {
                std::rethrow_exception(errors[i]);
            } catch (const std::exception& e) {
                throw std::runtime_error(fmt::format("sweep value '{}' failed: {}", values[i], e.what()));
            }
        }
        out.push_back(std::move(*results[i]));
    }
    return out;
}

void write_csv_header(std::ostream& out) {
    out << "run_id,geometry,policy,superpage_probability,accesses,hit_rate,mpki,amat_cycles,"
           "dynamic_energy,leakage_energy,coherence_probe_energy,ways_read_mean,core,coherence_probes,"
           "l1_latency_base,l1_latency_super,baseline_amat_cycles,baseline_dynamic_energy\n";
}

void write_csv_rows(std::ostream& out, const RunResult& r) {
    auto row = [&](const MetricsAccumulator& m, const std::string& core, const MetricsAccumulator* b) {
        out << fmt::format("{},{},{},{},{},{},{},{},{:.6f},{:.6f},{:.6f},{},{},{},{},{},{},{}\n", r.run_id,
                           r.geometry, r.policy, r.superpage_probability, m.accesses, opt(hit_rate(m)),
                           opt(mpki(m)), opt(amat(m)), m.dynamic_energy_total, m.leakage_energy_total,
                           m.coherence_probe_energy, opt(ways_read_mean(m)), core, m.coherence_probes,
                           r.latency_base_cycles, r.latency_super_cycles, b ? opt(amat(*b)) : std::string{},
                           b ? fmt::format("{:.6f}", b->dynamic_energy_total) : std::string{});
    };
    for (std::size_t c = 0; c < r.per_core.size(); ++c) {
        const MetricsAccumulator* b = r.baseline_per_core ? &(*r.baseline_per_core)[c] : nullptr;
        row(r.per_core[c], std::to_string(c), b);
    }
    row(r.total, "all", r.baseline_total ? &*r.baseline_total : nullptr);
}

void write_csv(std::ostream& out, const std::vector<RunResult>& results) {
    write_csv_header(out);
    for (const auto& r : results) write_csv_rows(out, r);
}

void write_plot_data(const std::string& dir, const std::string& x_name, const std::vector<std::string>& x_values,
                     const std::vector<RunResult>& results) {
    std::filesystem::create_directories(dir);
    auto open = [&](const std::string& name) {
        std::ofstream f(std::filesystem::path(dir) / name);
        if (!f) throw std::runtime_error(fmt::format("cannot write {}/{}", dir, name));
        return f;
    };
    std::ofstream amat_f = open(fmt::format("amat_vs_{}.dat", x_name));
    std::ofstream energy_f = open(fmt::format("energy_vs_{}.dat", x_name));
    amat_f << fmt::format("# {} amat_cycles baseline_amat_cycles normalized\n", x_name);
    energy_f << fmt::format("# {} dynamic_energy baseline_dynamic_energy normalized\n", x_name);
    for (std::size_t i = 0; i < results.size(); ++i) {
        const RunResult& r = results[i];
        const std::string x = i < x_values.size() ? x_values[i] : std::to_string(i);
        const auto a = amat(r.total);
        const auto ba = r.baseline_total ? amat(*r.baseline_total) : std::nullopt;
        amat_f << fmt::format("{} {} {} {}\n", x, a ? fmt::format("{:.6f}", *a) : "nan",
                              ba ? fmt::format("{:.6f}", *ba) : "nan",
                              a && ba && *ba > 0 ? fmt::format("{:.6f}", *a / *ba) : "nan");
        const double e = r.total.dynamic_energy_total;
        const auto be = r.baseline_total ? std::optional<double>(r.baseline_total->dynamic_energy_total)
                                         : std::nullopt;
        energy_f << fmt::format("{} {:.6f} {} {}\n", x, e, be ? fmt::format("{:.6f}", *be) : "nan",
                                be && *be > 0 ? fmt::format("{:.6f}", e / *be) : "nan");
    }
}

}  // namespace vespa
