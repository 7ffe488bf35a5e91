// vespa-sim: experiment runner for the banked VIPT L1 simulator.

#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "vespa/config.hpp"
#include "vespa/experiment.hpp"
#include "vespa/oracle/selftest.hpp"

namespace {

using namespace vespa;

Config load_config(const std::string& path, const std::vector<std::string>& overrides) {
    Config c;
    if (!path.empty()) c.load_file(path);
    c.apply_overrides(overrides);
    return c;
}

std::vector<std::string> split_values(const std::string& list) {
    std::vector<std::string> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename Fn>
void with_output(const std::string& path, Fn&& fn) {
    if (path.empty()) {
        fn(std::cout);
        return;
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error(fmt::format("cannot write {}", path));
    fn(f);
    if (!f) throw std::runtime_error(fmt::format("error writing {}", path));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Trace-driven simulator of a superpage-aware banked VIPT L1 cache"};
    app.require_subcommand(1);

    std::string config_path;
    std::string plot_dir;

    auto* run = app.add_subcommand("run", "run one experiment and write CSV");
    run->add_option("-c,--config", config_path, "config file");
    run->add_option("--plot-data", plot_dir, "directory for x/y data files");
    run->allow_extras();

    std::string axis_name;
    std::string values;
    unsigned workers = 0;
    auto* sweep_cmd = app.add_subcommand("sweep", "run one experiment per axis value");
    sweep_cmd->add_option("-c,--config", config_path, "config file");
    sweep_cmd->add_option("--axis", axis_name, "probability | geometry | policy")->required();
    sweep_cmd->add_option("--values", values, "comma-separated axis values")->required();
    sweep_cmd->add_option("--workers", workers, "parallel points (default: sweep.workers)");
    sweep_cmd->add_option("--plot-data", plot_dir, "directory for x/y data files");
    sweep_cmd->allow_extras();

    std::string trace_out;
    auto* gen = app.add_subcommand("gen-trace", "write a synthetic trace (.trace or .btrace)");
    gen->add_option("-c,--config", config_path, "config file");
    gen->add_option("-o,--out", trace_out, "output path")->required();
    gen->allow_extras();

    auto* print = app.add_subcommand("print-config", "print every config key with its value");
    print->add_option("-c,--config", config_path, "config file");
    print->allow_extras();

    oracle::SelftestOptions st;
    bool full = false;
    auto* selftest = app.add_subcommand("selftest", "run the oracle-equivalence checks");
    selftest->add_flag("--full", full, "use the full acceptance sizes");
    selftest->add_option("--seed", st.seed, "seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) {
            const Config cfg = load_config(config_path, run->remaining());
            const RunConfig rc = build_run_config(cfg);
            const RunResult r = run_experiment(rc);
            with_output(rc.output_csv, [&](std::ostream& out) {
                write_csv_header(out);
                write_csv_rows(out, r);
            });
            if (!plot_dir.empty()) {
                write_plot_data(plot_dir, "probability", {fmt::format("{}", r.superpage_probability)}, {r});
            }
            if (r.stats.stale_reads != 0) {
                std::cerr << fmt::format("error: {} stale reads detected\n", r.stats.stale_reads);
                return 3;
            }
        } else if (sweep_cmd->parsed()) {
            const Config cfg = load_config(config_path, sweep_cmd->remaining());
            const SweepAxis axis = parse_sweep_axis(axis_name);
            const auto vals = split_values(values);
            const unsigned w = workers != 0 ? workers : static_cast<unsigned>(cfg.get_uint("sweep.workers"));
            const auto results = sweep(cfg, axis, vals, w);
            with_output(cfg.get("output.csv"), [&](std::ostream& out) { write_csv(out, results); });
            if (!plot_dir.empty()) write_plot_data(plot_dir, to_string(axis), vals, results);
        } else if (gen->parsed()) {
            Config cfg = load_config(config_path, gen->remaining());
            cfg.set("trace.path", "");
            // The thread count is a property of the trace alone here.
            if (!cfg.is_auto("gen.threads")) cfg.set("sim.cores", cfg.get("gen.threads"));
            const RunConfig rc = build_run_config(cfg);
            GeneratorSource src(rc.generator);
            TraceWriter writer(trace_out, describe(rc.generator));
            while (auto rec = src.next()) writer.write(*rec);
            writer.close();
        } else if (print->parsed()) {
            const Config cfg = load_config(config_path, print->remaining());
            build_run_config(cfg);
            std::cout << cfg.render();
        } else if (selftest->parsed()) {
            if (!full) {
                st.traces = 10;
                st.accesses = 20000;
                st.scenarios = 10;
                st.variants = 100;
            }
            bool ok = true;
            for (const auto& r : oracle::run_selftest(st)) {
                std::cout << fmt::format("[{}] {}: {} ({:.2f}s)\n", r.passed ? "PASS" : "FAIL", r.name, r.detail,
                                         r.seconds);
                ok = ok && r.passed;
            }
            return ok ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
