// Benchmark and fault-injection driver. Sweeps block/batch/thread cells,
// replays failure timelines, and runs tier-penalty sensitivity scans against
// the engine, emitting summary.csv, rails.csv, timeline.csv and a text table.

#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "spray/bench.hpp"

using namespace spray;

namespace {

Bytes parse_size(const std::string& s) {
    if (s.empty()) throw CLI::ValidationError("empty size");
    char suffix = s.back();
    double mult = 1.0;
    std::string num = s;
    if (suffix == 'K' || suffix == 'k') mult = 1024.0;
    if (suffix == 'M' || suffix == 'm') mult = 1048576.0;
    if (suffix == 'G' || suffix == 'g') mult = 1073741824.0;
    if (mult != 1.0) num = s.substr(0, s.size() - 1);
    return static_cast<Bytes>(std::stod(num) * mult);
}

std::vector<Bytes> parse_sizes(const std::vector<std::string>& in) {
    std::vector<Bytes> out;
    for (const std::string& s : in) out.push_back(parse_size(s));
    return out;
}

void write_file(const std::filesystem::path& p, const std::string& content) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << content;
}

std::string resolve_fabric(const std::string& arg, BenchScenario& sc) {
    // Either a file path or a canonical fabric name.
    if (std::filesystem::exists(arg)) {
        sc.fabric_file = arg;
        return arg;
    }
    sc.fabric_json = canonical_fabric(arg);
    return arg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"multi-rail transfer engine benchmark driver"};
    app.require_subcommand(1);

    std::string fabric = "uniform8";
    std::string policy = "telemetry";
    std::vector<std::string> blocks = {"4M"};
    std::vector<std::uint32_t> batches = {1};
    std::uint32_t threads = 4;
    std::uint32_t iters = 64;
    double duration = 0.0;
    std::uint64_t seed = 1;
    std::string faults;
    std::string clock = "virtual";
    std::string out_dir = "bench-out";
    std::vector<double> p1_values = {1.0, 3.0, 1e6};

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--fabric", fabric, "fabric file or canonical name (uniform8|skewed8|tiered)");
        cmd->add_option("--policy", policy, "rr|hash|telemetry");
        cmd->add_option("--block", blocks, "block sizes (e.g. 64K 4M)");
        cmd->add_option("--batch", batches, "batch sizes");
        cmd->add_option("--threads", threads, "submission threads");
        cmd->add_option("--iters", iters, "requests per thread per cell");
        cmd->add_option("--duration", duration, "run duration seconds (overrides --iters)");
        cmd->add_option("--seed", seed, "rng seed");
        cmd->add_option("--faults", faults, "fault schedule file");
        cmd->add_option("--clock", clock, "virtual|real");
        cmd->add_option("--out", out_dir, "output directory");
    };

    CLI::App* sweep = app.add_subcommand("sweep", "block/batch sweep with summary stats");
    add_common(sweep);
    CLI::App* timeline =
        app.add_subcommand("timeline", "failure-injection timeline (requires --faults)");
    add_common(timeline);
    CLI::App* sensitivity =
        app.add_subcommand("sensitivity", "tier-2 penalty (P1) sensitivity scan");
    add_common(sensitivity);
    sensitivity->add_option("--p1", p1_values, "penalty values to scan");
    CLI::App* fabric_cmd = app.add_subcommand("fabric", "print a canonical fabric file");
    std::string fabric_name = "uniform8";
    fabric_cmd->add_option("name", fabric_name, "uniform8|skewed8|tiered");

    CLI11_PARSE(app, argc, argv);

    try {
        if (fabric_cmd->parsed()) {
            std::cout << canonical_fabric(fabric_name);
            return 0;
        }

        BenchScenario sc;
        resolve_fabric(fabric, sc);
        auto pol = policy_from_name(policy);
        if (!pol) throw ConfigError("unknown policy '" + policy + "'");
        sc.policy = *pol;
        sc.block_sizes = parse_sizes(blocks);
        sc.batch_sizes = batches;
        sc.threads = threads;
        sc.iters = duration > 0.0 ? 0 : iters;
        sc.duration_s = duration;
        sc.seed = seed;
        sc.faults_file = faults;
        if (clock == "virtual")
            sc.clock_mode = ClockMode::kVirtual;
        else if (clock == "real")
            sc.clock_mode = ClockMode::kReal;
        else
            throw ConfigError("unknown clock mode '" + clock + "'");
        if (sc.clock_mode == ClockMode::kReal) sc.backends = {"memory", "tcp"};

        std::filesystem::create_directories(out_dir);
        const std::filesystem::path out(out_dir);

        if (sweep->parsed()) {
            SweepReport rep = run_sweep(sc);
            write_file(out / "summary.csv", rep.summary_csv());
            write_file(out / "rails.csv", rep.rails_csv());
            std::cout << rep.table();
        } else if (timeline->parsed()) {
            TimelineReport rep = run_failure_timeline(sc);
            write_file(out / "timeline.csv", rep.timeline_csv());
            write_file(out / "rails.csv", rep.snapshot.to_csv());
            std::cout << "baseline_gbps=" << rep.baseline_gbps
                      << " app_visible_failures=" << rep.app_visible_failures << "\n";
        } else if (sensitivity->parsed()) {
            // policy characterization: rare latency spikes are the scheduler's
            // to absorb here, not the exclusion layer's
            sc.resilience.degradation_events = 1 << 20;
            SensitivityReport rep = run_sensitivity(sc, p1_values);
            write_file(out / "summary.csv", rep.csv());
            std::cout << rep.table();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
