#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resched/analytics.hpp"
#include "resched/event_log.hpp"
#include "resched/optimizer.hpp"
#include "resched/scenario.hpp"
#include "resched/simulator.hpp"
#include "resched/situation.hpp"

namespace resched {

/// Analytics plus situation state folded over a log, in the order the service applies them.
struct StateFold {
    analytics::AnalyticsState analytics;
    situation::SituationState situations;
    situation::SituationModel model;

    situation::ObserveResult apply(const Event& event);
    /// Combined digest of both states; what `replay` and the service print.
    std::string hash() const;
};

struct ReplaySummary {
    StateFold state;
    std::size_t events = 0;
    std::vector<std::string> warnings;
};

ReplaySummary replay_log(const std::string& path, const analytics::LogicVersion& logic,
                         const situation::SituationModel& model = {});

/// Resolves a scenario argument: an existing path, or the name of a bundled scenario.
std::string resolve_scenario_path(const std::string& name_or_path);

namespace exp {

struct RunOptions {
    std::uint64_t seed = 1;
    opt::ObjectiveWeights weights;
    opt::GaParams ga;             // seed is replaced by the run seed
    int history_shifts = 3;       // shifts of recorded production preceding the evaluated one
    analytics::LogicVersion logic;
};

struct ArmOutcome {
    int completed = 0;
    int failed_batches = 0;
    int stranded = 0;
    int pending = 0;
};

struct RunReport {
    std::string scenario_id;
    std::uint64_t seed = 0;
    MetricsReport baseline;
    MetricsReport optimized;
    double usage_reduction_pct = 0.0;
    double stddev_reduction_pct = 0.0;
    int generations_run = 0;
    double baseline_scalar = 0.0;
    double optimized_scalar = 0.0;
    ArmOutcome baseline_run;
    ArmOutcome optimized_run;
    std::string state_hash;  // fold of the recorded events
    double wall_time_s = 0.0;
};

struct RunArtifacts {
    RunReport report;
    Schedule baseline_schedule;
    Schedule optimized_schedule;
    std::vector<Event> events;  // history plus the optimized shift, seq-numbered
};

/// 100 * (1 - optimized / baseline); 0 when the baseline is 0.
double reduction_pct(double baseline, double optimized);
double median(std::vector<double> values);

RunArtifacts run(const ScenarioConfig& scenario, const RunOptions& options);
/// usage.csv, utilization.csv, run_report.json, timing.json, events.ndjson.
void write_run(const RunArtifacts& run, const std::string& out_dir);

nlohmann::ordered_json to_json(const RunReport& r, bool with_wall_time);

struct Stat {
    double median = 0.0;
    double min = 0.0;
    double max = 0.0;
};

struct CompareSummary {
    std::vector<RunReport> runs;
    Stat usage;
    Stat stddev;
};

CompareSummary summarize(std::vector<RunReport> runs);
std::string format_table(const CompareSummary& s);
/// compare.csv and compare.txt plus one run directory per seed.
void write_compare(const CompareSummary& s, const std::string& out_dir);

/// "1..5" or "1,2,3" (mixed allowed: "1..3,7").
std::vector<std::uint64_t> parse_seeds(const std::string& text);

}  // namespace exp
}  // namespace resched
