#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "resched/event_log.hpp"
#include "resched/model.hpp"
#include "resched/rng.hpp"
#include "resched/scenario.hpp"

namespace resched::sim {

/// Independent random streams derived from the master seed.
enum Stream : std::uint64_t { kOutcomeStream = 1, kHazardStream = 2, kSensorStream = 3 };

struct SimOptions {
    /// Status readings emitted after every failure so the debounce rule can confirm it.
    int corroborating_readings = 2;
    bool hazards_enabled = true;
    bool sensors_enabled = true;
};

enum class JobStatus { Pending, Completed, Stranded };

struct SimJob {
    std::string line_id;
    Job job;
    JobStatus status = JobStatus::Pending;
    std::optional<BatchOutcome> outcome;
    bool operator==(const SimJob&) const = default;
};

enum class OrderFate { CompletedSuccess, CompletedFailed, Pending, Stranded };
const char* to_string(OrderFate f);

/// Uniform draw deciding the outcome of one batch. Keyed by (order, line, attempt)
/// so outcomes do not depend on the order in which a schedule runs its jobs.
double outcome_draw(std::uint64_t master_seed, const std::string& order_id, const std::string& line_id,
                    std::uint64_t attempt);

/// Discrete-event model of the batch plant.
///
/// Time advances only through step(); every random quantity comes from a named
/// stream of the master seed, so identical command sequences give identical events.
class Simulator {
  public:
    struct Init;
    /// Validates the config and returns the simulator at shift start together with
    /// one OrderCreated event per order.
    static Init init(ScenarioConfig config, SimOptions options = {});

    /// Processes everything up to and including `until`, in time order.
    std::vector<Event> step(Minutes until);

    /// Forced failure of `line` at `at` (steps there first). A failure of a line that
    /// is already down yields a single event flagged duplicate.
    std::vector<Event> inject_failure(const std::string& line, Minutes at);

    /// Replaces pending work with `schedule`. In-flight jobs are kept and may only
    /// appear unchanged; completed orders must be absent.
    Event commit_schedule(const Schedule& schedule, const std::string& proposal_id);

    /// Applies an externally reported plant event (failure, recovery, maintenance, new order).
    void apply_external(const Event& event);

    PlantState plant_state() const;
    Minutes clock() const { return clock_; }
    LineState line_state(const std::string& line) const;
    const std::vector<SimJob>& jobs() const { return jobs_; }
    const ScenarioConfig& config() const { return config_; }
    const Catalog& catalog() const { return catalog_; }
    std::map<std::string, OrderFate> order_fates() const;
    /// Jobs of the committed schedule (any status), per line in time order.
    Schedule committed_schedule() const;

  private:
    Simulator() = default;

    struct LineRuntime {
        LineState state = LineState::Available;
        std::optional<Minutes> next_failure;
        std::optional<Minutes> recovery_at;
        std::uint64_t hazard_draws = 0;
        bool operator==(const LineRuntime&) const = default;
    };

    void fail_line(const std::string& line, Minutes at);
    void strand_from(const std::string& line, Minutes at);
    void sample_next_failure(const std::string& line, Minutes from);
    std::string last_family(const std::string& line, std::optional<std::size_t> skip = {}) const;
    std::vector<Event> failure_events(const std::string& line, Minutes at, bool injected) const;
    bool in_flight(const SimJob& j) const;

    ScenarioConfig config_;
    Catalog catalog_;
    SimOptions options_;
    Minutes clock_ = 0;
    std::map<std::string, LineRuntime> lines_;
    std::vector<SimJob> jobs_;
    std::map<std::string, std::uint64_t> attempts_;  // "order|line" -> executions so far
    std::map<std::string, Minutes> next_sensor_;
    std::map<std::string, Xoshiro256> sensor_rng_;
};

struct Simulator::Init {
    Simulator sim;
    std::vector<Event> events;
};

}  // namespace resched::sim
