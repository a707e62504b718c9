#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <thread>

#include "resched/codec.hpp"
#include "resched/experiment.hpp"
#include "resched/http_api.hpp"
#include "resched/service.hpp"

using namespace resched;

namespace {

std::atomic<bool> g_stop{false};
svc::HttpApi* g_api = nullptr;

void on_signal(int) {
    g_stop = true;
    if (g_api) g_api->stop();
}

void print_violations(const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    for (const auto& v : e.violations()) std::cerr << "  - " << v.describe() << "\n";
}

int cmd_run(const std::string& scenario, std::uint64_t seed, const std::string& out, int generations) {
    const ScenarioConfig sc = load_scenario(resolve_scenario_path(scenario));
    exp::RunOptions options;
    options.seed = seed;
    if (generations > 0) options.ga.generations = generations;
    const auto run = exp::run(sc, options);
    exp::write_run(run, out);
    const auto& r = run.report;
    std::printf("%s seed %llu: usage %lld -> %lld (%.2f%%), utilization stddev %.4f -> %.4f (%.2f%%), %d generations\n",
                r.scenario_id.c_str(), static_cast<unsigned long long>(r.seed),
                static_cast<long long>(r.baseline.total_usage), static_cast<long long>(r.optimized.total_usage),
                r.usage_reduction_pct, r.baseline.utilization_stddev, r.optimized.utilization_stddev,
                r.stddev_reduction_pct, r.generations_run);
    return 0;
}

int cmd_compare(const std::string& scenario, const std::string& seeds, const std::string& out, int generations) {
    const ScenarioConfig sc = load_scenario(resolve_scenario_path(scenario));
    std::vector<exp::RunReport> reports;
    for (const auto seed : exp::parse_seeds(seeds)) {
        exp::RunOptions options;
        options.seed = seed;
        if (generations > 0) options.ga.generations = generations;
        const auto run = exp::run(sc, options);
        if (!out.empty()) exp::write_run(run, (std::filesystem::path(out) / ("seed-" + std::to_string(seed))).string());
        reports.push_back(run.report);
    }
    const auto summary = exp::summarize(std::move(reports));
    if (!out.empty()) exp::write_compare(summary, out);
    std::cout << exp::format_table(summary);
    return 0;
}

int cmd_generate(int lines, int recipes, int orders, std::uint64_t seed, const std::string& out, const std::string& id) {
    ScenarioConfig sc = generate_scenario(lines, recipes, orders, seed);
    if (!id.empty()) sc.id = id;
    save_scenario(sc, out);
    std::printf("wrote %s (%zu lines, %zu recipes, %zu orders)\n", out.c_str(), sc.lines.size(), sc.recipes.size(),
                sc.orders.size());
    return 0;
}

int cmd_replay(const std::string& log, const std::string& logic, const std::string& config) {
    situation::SituationModel model;
    if (!config.empty()) model = svc::Config::load(config).situation_model;
    const auto summary = replay_log(log, analytics::LogicVersion::parse(logic), model);
    for (const auto& w : summary.warnings) std::cerr << "warning: " << w << "\n";
    std::printf("events: %zu\nlogic: %s\n\nfailure rates:\n", summary.events,
                summary.state.analytics.logic.id().c_str());
    std::printf("  %-10s %-8s %-10s %7s %9s %8s  %s\n", "recipe", "line", "prev", "trials", "failures", "rate",
                "level");
    for (const auto& row : analytics::rate_table(summary.state.analytics))
        std::printf("  %-10s %-8s %-10s %7llu %9llu %8.4f  %s\n", row.at("recipe_id").get<std::string>().c_str(),
                    row.at("line_id").get<std::string>().c_str(), row.at("prev_family").get<std::string>().c_str(),
                    row.at("trials").get<unsigned long long>(), row.at("failures").get<unsigned long long>(),
                    row.at("rate").get<double>(), row.at("backoff_level").get<std::string>().c_str());
    std::printf("\nsituations:\n");
    for (const auto& s : summary.state.situations.history)
        std::printf("  %s %-19s %-14s at %lld (seq %llu) reliability %.3f%s\n", s.id.c_str(), to_string(s.kind),
                    s.subject.c_str(), static_cast<long long>(s.detected_at),
                    static_cast<unsigned long long>(s.detected_seq), s.reliability, s.active ? " active" : "");
    std::printf("\nstate hash: %s\n", summary.state.hash().c_str());
    return 0;
}

int cmd_serve(const std::string& config_path, int port, bool realtime, int ms_per_minute) {
    svc::Config config = svc::Config::load(config_path);
    if (port >= 0) config.port = port;
    svc::Service service(config);
    svc::HttpApi api(service);
    const int bound = api.bind(config.bind, config.port);
    std::printf("listening on http://%s:%d (clock %lld)\n", config.bind.c_str(), bound,
                static_cast<long long>(service.clock()));
    std::fflush(stdout);

    g_api = &api;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    std::thread ticker;
    if (realtime) {
        ticker = std::thread([&] {
            while (!g_stop) {
                std::this_thread::sleep_for(std::chrono::milliseconds(ms_per_minute));
                if (g_stop) break;
                try {
                    service.advance(service.clock() + 1);
                } catch (const std::exception& e) {
                    std::fprintf(stderr, "advance failed: %s\n", e.what());
                }
            }
        });
    }
    api.serve();
    g_stop = true;
    if (ticker.joinable()) ticker.join();
    g_api = nullptr;
    std::printf("state hash: %s\n", service.state_hash().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Production rescheduling: simulation, analytics and schedule optimization"};
    app.require_subcommand(1);

    std::string scenario, out, seeds = "1..5", log, logic = "mt5", config, id;
    std::uint64_t seed = 1;
    int generations = 0, lines = 6, recipes = 12, orders = 40, port = -1, ms_per_minute = 1000;
    bool realtime = false;

    auto* run = app.add_subcommand("run", "Baseline vs optimized schedule for one seed");
    run->add_option("--scenario", scenario, "Scenario file or bundled name")->required();
    run->add_option("--seed", seed, "Run seed");
    run->add_option("--out", out, "Output directory")->required();
    run->add_option("--generations", generations, "Override GA generation budget");

    auto* compare = app.add_subcommand("compare", "Run several seeds and summarize");
    compare->add_option("--scenario", scenario, "Scenario file or bundled name")->required();
    compare->add_option("--seeds", seeds, "Seeds, e.g. 1..5 or 1,2,3");
    compare->add_option("--out", out, "Output directory");
    compare->add_option("--generations", generations, "Override GA generation budget");

    auto* generate = app.add_subcommand("generate", "Synthesize a scenario");
    generate->add_option("--lines", lines)->check(CLI::PositiveNumber);
    generate->add_option("--recipes", recipes)->check(CLI::PositiveNumber);
    generate->add_option("--orders", orders)->check(CLI::PositiveNumber);
    generate->add_option("--seed", seed);
    generate->add_option("--out", out, "Scenario file to write")->required();
    generate->add_option("--id", id, "Scenario id (default derived from the parameters)");

    auto* replay = app.add_subcommand("replay", "Rebuild analytics and situations from a log");
    replay->add_option("--log", log, "Event log (NDJSON)")->required();
    replay->add_option("--logic", logic, "Logic version, e.g. mt5");
    replay->add_option("--config", config, "Service config supplying the situation model");

    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--config", config, "Service config (JSON)")->required();
    serve->add_option("--port", port, "Override the configured port (0 picks a free one)");
    serve->add_flag("--realtime", realtime, "Advance the simulation clock with wall time");
    serve->add_option("--ms-per-minute", ms_per_minute, "Wall milliseconds per simulated minute")
        ->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*run) return cmd_run(scenario, seed, out, generations);
        if (*compare) return cmd_compare(scenario, seeds, out, generations);
        if (*generate) return cmd_generate(lines, recipes, orders, seed, out, id);
        if (*replay) return cmd_replay(log, logic, config);
        if (*serve) return cmd_serve(config, port, realtime, ms_per_minute);
    } catch (const ValidationError& e) {
        print_violations(e);
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
