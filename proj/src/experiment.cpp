#include "resched/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "resched/codec.hpp"
#include "resched/digest.hpp"
#include "resched/rng.hpp"

namespace fs = std::filesystem;

namespace resched {

using nlohmann::ordered_json;

situation::ObserveResult StateFold::apply(const Event& event) {
    analytics::apply_in_place(analytics, event);
    return situation::observe(model, situations, event, analytics);
}

std::string StateFold::hash() const {
    return sha256_hex(analytics::state_hash(analytics) + "\n" + situation::state_hash(situations));
}

ReplaySummary replay_log(const std::string& path, const analytics::LogicVersion& logic,
                         const situation::SituationModel& model) {
    ReplaySummary out;
    out.state.analytics.logic = logic;
    out.state.model = model;
    for (const auto& e : read_log_file(path, &out.warnings)) {
        out.state.apply(e);
        ++out.events;
    }
    return out;
}

std::string resolve_scenario_path(const std::string& name) {
    if (fs::exists(name)) return name;
    for (const std::string& candidate : {name, name + ".json"}) {
        const fs::path p = fs::path(RESCHED_SCENARIO_DIR) / candidate;
        if (fs::exists(p)) return p.string();
    }
    throw Error("scenario not found: " + name);
}

namespace exp {

namespace {

ScenarioConfig shifted(const ScenarioConfig& base, Minutes offset, const std::string& prefix, std::uint64_t seed) {
    ScenarioConfig c = base;
    c.shift_start += offset;
    c.rng_seed = seed;
    for (auto& o : c.orders) {
        o.id = prefix + o.id;
        o.release += offset;
        o.due += offset;
    }
    return c;
}

Minutes horizon(const Schedule& s, Minutes floor) {
    Minutes end = floor;
    for (const auto& [_, jobs] : s.lines)
        if (!jobs.empty()) end = std::max(end, jobs.back().end);
    return end;
}

ArmOutcome outcome_of(const sim::Simulator& sim) {
    ArmOutcome a;
    for (const auto& [_, fate] : sim.order_fates()) {
        switch (fate) {
            case sim::OrderFate::CompletedSuccess: ++a.completed; break;
            case sim::OrderFate::CompletedFailed:
                ++a.completed;
                ++a.failed_batches;
                break;
            case sim::OrderFate::Stranded: ++a.stranded; break;
            case sim::OrderFate::Pending: ++a.pending; break;
        }
    }
    return a;
}

std::string fmt(double v, int precision = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

void write_atomic(const fs::path& path, const std::string& content) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + tmp.string());
        f << content;
        if (!f.flush()) throw Error("cannot write " + tmp.string());
    }
    fs::rename(tmp, path);
}

ordered_json arm_json(const ArmOutcome& a) {
    return ordered_json{
        {"completed", a.completed}, {"failed_batches", a.failed_batches}, {"stranded", a.stranded}, {"pending", a.pending}};
}

}  // namespace

double reduction_pct(double baseline, double optimized) {
    if (baseline == 0.0) return 0.0;
    return 100.0 * (1.0 - optimized / baseline);
}

double median(std::vector<double> v) {
    if (v.empty()) throw Error("median of an empty set");
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

RunArtifacts run(const ScenarioConfig& scenario, const RunOptions& options) {
    scenario.validate();
    const auto started = std::chrono::steady_clock::now();
    const std::uint64_t master = derive_seed(scenario.rng_seed, options.seed);
    const Minutes len = scenario.shift_length;

    RunArtifacts out;
    EventLog log;
    StateFold fold;
    fold.analytics.logic = options.logic;
    auto record = [&](std::vector<Event> events) {
        for (auto& e : events) {
            e.seq = log.append(e);
            fold.apply(e);
            out.events.push_back(std::move(e));
        }
    };

    // Recorded history: earlier shifts run on random valid schedules so the
    // estimator sees a spread of (recipe, line, predecessor) combinations.
    Xoshiro256 rng(derive_seed(master, 100));
    Minutes offset = 0;
    sim::SimOptions quiet;
    quiet.hazards_enabled = false;
    quiet.sensors_enabled = false;
    for (int h = 0; h < options.history_shifts; ++h) {
        const std::string prefix = "H" + std::to_string(h + 1) + "-";
        auto init = sim::Simulator::init(shifted(scenario, offset, prefix, derive_seed(master, 200 + h)), quiet);
        auto& sim = init.sim;
        record(std::move(init.events));
        const PlantState plant = sim.plant_state();
        opt::Chromosome c;
        c.perm = plant.open_orders;
        for (std::size_t i = c.perm.size(); i > 1; --i) std::swap(c.perm[i - 1], c.perm[rng.below(i)]);
        for (const auto& id : c.perm) {
            std::vector<std::string> lines;
            for (const auto& l : plant.available_lines())
                if (sim.catalog().recipe_of_order(id)->duration_on(l)) lines.push_back(l);
            c.assign[id] = lines[rng.below(lines.size())];
        }
        const Schedule s = opt::decode(c, plant, sim.catalog());
        record({sim.commit_schedule(s, "history-" + std::to_string(h + 1))});
        const Minutes end = horizon(s, plant.shift_start + len);
        record(sim.step(end));
        offset = ((end - scenario.shift_start) / len + 1) * len;
    }

    const ScenarioConfig today = shifted(scenario, offset, "", master);
    const RateFn rate = analytics::rate_fn(fold.analytics);

    auto opt_init = sim::Simulator::init(today);
    auto& opt_sim = opt_init.sim;
    record(std::move(opt_init.events));
    const PlantState plant = opt_sim.plant_state();
    const Catalog& catalog = opt_sim.catalog();

    out.baseline_schedule = baseline_schedule(plant, catalog);
    opt::GaParams ga = options.ga;
    ga.seed = options.seed;
    const auto result = opt::optimize_reactive(plant, catalog, rate, options.weights, ga);
    out.optimized_schedule = result.schedule;

    const Minutes end =
        std::max(horizon(out.baseline_schedule, plant.shift_start + len), horizon(out.optimized_schedule, 0));
    record({opt_sim.commit_schedule(out.optimized_schedule, "optimized")});
    record(opt_sim.step(end));

    auto base_init = sim::Simulator::init(today);
    auto& base_sim = base_init.sim;
    base_sim.commit_schedule(out.baseline_schedule, "baseline");
    base_sim.step(end);

    RunReport& r = out.report;
    r.scenario_id = scenario.id;
    r.seed = options.seed;
    const MetricsContext ctx{&catalog, &plant, rate, 1.0};
    r.baseline = compute_metrics(out.baseline_schedule, ctx);
    r.optimized = compute_metrics(out.optimized_schedule, ctx);
    r.usage_reduction_pct = reduction_pct(static_cast<double>(r.baseline.total_usage),
                                          static_cast<double>(r.optimized.total_usage));
    r.stddev_reduction_pct = reduction_pct(r.baseline.utilization_stddev, r.optimized.utilization_stddev);
    r.generations_run = result.generations_run;
    r.baseline_scalar = result.baseline_scalar;
    r.optimized_scalar = result.scalar;
    r.baseline_run = outcome_of(base_sim);
    r.optimized_run = outcome_of(opt_sim);
    r.state_hash = fold.hash();
    r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return out;
}

ordered_json to_json(const RunReport& r, bool with_wall_time) {
    ordered_json j;
    j["scenario_id"] = r.scenario_id;
    j["seed"] = r.seed;
    j["baseline"] = resched::to_json(r.baseline);
    j["optimized"] = resched::to_json(r.optimized);
    j["usage_reduction_pct"] = r.usage_reduction_pct;
    j["stddev_reduction_pct"] = r.stddev_reduction_pct;
    j["generations_run"] = r.generations_run;
    j["baseline_scalar"] = r.baseline_scalar;
    j["optimized_scalar"] = r.optimized_scalar;
    j["baseline_run"] = arm_json(r.baseline_run);
    j["optimized_run"] = arm_json(r.optimized_run);
    j["state_hash"] = r.state_hash;
    if (with_wall_time) j["wall_time"] = r.wall_time_s;
    return j;
}

void write_run(const RunArtifacts& a, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    const RunReport& r = a.report;

    std::string usage = "line_id,baseline_usage_min,optimized_usage_min\n";
    std::string util = "line_id,baseline_utilization,optimized_utilization\n";
    for (const auto& [line, base] : r.baseline.per_line_usage) {
        const auto opt_it = r.optimized.per_line_usage.find(line);
        usage += line + "," + std::to_string(base) + "," +
                 std::to_string(opt_it == r.optimized.per_line_usage.end() ? 0 : opt_it->second) + "\n";
        const auto ou = r.optimized.per_line_utilization.find(line);
        util += line + "," + fmt(r.baseline.per_line_utilization.at(line)) + "," +
                fmt(ou == r.optimized.per_line_utilization.end() ? 0.0 : ou->second) + "\n";
    }
    write_atomic(dir / "usage.csv", usage);
    write_atomic(dir / "utilization.csv", util);

    ordered_json report = to_json(r, false);
    report["baseline_schedule"] = resched::to_json(a.baseline_schedule);
    report["optimized_schedule"] = resched::to_json(a.optimized_schedule);
    write_atomic(dir / "run_report.json", report.dump(2) + "\n");
    write_atomic(dir / "timing.json", ordered_json{{"seed", r.seed}, {"wall_time", r.wall_time_s}}.dump(2) + "\n");

    std::string events;
    for (const auto& e : a.events) events += event_to_line(e);
    write_atomic(dir / "events.ndjson", events);
}

CompareSummary summarize(std::vector<RunReport> runs) {
    if (runs.empty()) throw Error("compare needs at least one seed");
    CompareSummary s;
    std::vector<double> usage, stddev;
    for (const auto& r : runs) {
        usage.push_back(r.usage_reduction_pct);
        stddev.push_back(r.stddev_reduction_pct);
    }
    auto stat = [](const std::vector<double>& v) {
        return Stat{median(v), *std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end())};
    };
    s.usage = stat(usage);
    s.stddev = stat(stddev);
    s.runs = std::move(runs);
    return s;
}

std::string format_table(const CompareSummary& s) {
    std::ostringstream o;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %14s %14s %12s %12s\n", "seed", "usage_red_%", "stddev_red_%",
                  "base_usage", "opt_usage");
    o << line;
    for (const auto& r : s.runs) {
        std::snprintf(line, sizeof line, "%-8llu %14.2f %14.2f %12lld %12lld\n",
                      static_cast<unsigned long long>(r.seed), r.usage_reduction_pct, r.stddev_reduction_pct,
                      static_cast<long long>(r.baseline.total_usage), static_cast<long long>(r.optimized.total_usage));
        o << line;
    }
    for (const auto& [name, u, d] : {std::tuple{"median", s.usage.median, s.stddev.median},
                                     std::tuple{"min", s.usage.min, s.stddev.min},
                                     std::tuple{"max", s.usage.max, s.stddev.max}}) {
        std::snprintf(line, sizeof line, "%-8s %14.2f %14.2f\n", name, u, d);
        o << line;
    }
    return o.str();
}

void write_compare(const CompareSummary& s, const std::string& out_dir) {
    fs::create_directories(out_dir);
    std::string csv = "seed,usage_reduction_pct,stddev_reduction_pct,baseline_usage,optimized_usage,"
                      "baseline_stddev,optimized_stddev,generations_run\n";
    for (const auto& r : s.runs)
        csv += std::to_string(r.seed) + "," + fmt(r.usage_reduction_pct, 4) + "," + fmt(r.stddev_reduction_pct, 4) +
               "," + std::to_string(r.baseline.total_usage) + "," + std::to_string(r.optimized.total_usage) + "," +
               fmt(r.baseline.utilization_stddev) + "," + fmt(r.optimized.utilization_stddev) + "," +
               std::to_string(r.generations_run) + "\n";
    csv += "median," + fmt(s.usage.median, 4) + "," + fmt(s.stddev.median, 4) + ",,,,,\n";
    csv += "min," + fmt(s.usage.min, 4) + "," + fmt(s.stddev.min, 4) + ",,,,,\n";
    csv += "max," + fmt(s.usage.max, 4) + "," + fmt(s.stddev.max, 4) + ",,,,,\n";
    write_atomic(fs::path(out_dir) / "compare.csv", csv);
    write_atomic(fs::path(out_dir) / "compare.txt", format_table(s));
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string part;
    auto number = [&](const std::string& s) -> std::uint64_t {
        if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
            throw Error("invalid seed list '" + text + "'");
        return std::stoull(s);
    };
    while (std::getline(ss, part, ',')) {
        const auto dots = part.find("..");
        if (dots == std::string::npos) {
            out.push_back(number(part));
            continue;
        }
        const std::uint64_t lo = number(part.substr(0, dots));
        const std::uint64_t hi = number(part.substr(dots + 2));
        if (hi < lo || hi - lo > 10000) throw Error("invalid seed range '" + part + "'");
        for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
    }
    if (out.empty()) throw Error("empty seed list");
    return out;
}

}  // namespace exp
}  // namespace resched
