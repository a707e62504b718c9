#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace resched {

/// Simulation time in whole minutes. All schedule arithmetic is integral so that
/// replays are bit-exact.
using Minutes = std::int64_t;

class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct Violation {
    std::string rule;
    std::string order_id;
    std::string line_id;
    std::string detail;

    std::string describe() const;
    bool operator==(const Violation&) const = default;
};

/// Input rejected on validation grounds; carries every violation found.
class ValidationError : public Error {
  public:
    ValidationError(std::string what, std::vector<Violation> violations);
    const std::vector<Violation>& violations() const { return violations_; }

  private:
    std::vector<Violation> violations_;
};

enum class LineState { Available, Failed, Maintenance };

const char* to_string(LineState s);
LineState line_state_from_string(const std::string& s);

struct Recipe {
    std::string id;
    std::string family;
    std::map<std::string, Minutes> durations;  // line id -> processing minutes

    std::optional<Minutes> duration_on(const std::string& line) const;
};

/// Sequence-dependent setup times between recipe families.
struct ChangeoverMatrix {
    std::map<std::pair<std::string, std::string>, Minutes> entries;
    Minutes default_minutes = 0;

    /// An empty `from` means the line has no production history: no changeover.
    Minutes minutes(const std::string& from, const std::string& to) const;
};

struct Order {
    std::string id;
    std::string recipe_id;
    Minutes release = 0;
    Minutes due = 0;
    int priority = 0;

    bool operator==(const Order&) const = default;
};

/// Static problem data shared by every consumer of a scenario.
struct Catalog {
    std::map<std::string, Recipe> recipes;
    std::map<std::string, Order> orders;
    ChangeoverMatrix changeovers;

    const Recipe* recipe(const std::string& id) const;
    const Order* order(const std::string& id) const;
    const Recipe* recipe_of_order(const std::string& order_id) const;
};

struct LineStatus {
    std::string id;
    LineState state = LineState::Available;
    Minutes ready_at = 0;      // earliest minute new work can start
    std::string last_family;   // empty: no production history this shift
    std::string in_flight;     // order currently being processed, if any
};

/// Plant view a schedule is created against. Lines are kept sorted by id.
struct PlantState {
    Minutes shift_start = 0;
    Minutes shift_length = 0;
    Minutes clock = 0;
    std::vector<LineStatus> lines;
    std::vector<std::string> open_orders;

    const LineStatus* line(const std::string& id) const;
    LineStatus* line(const std::string& id);
    std::vector<std::string> available_lines() const;
};

struct Job {
    std::string order_id;
    Minutes changeover_start = 0;
    Minutes processing_start = 0;
    Minutes end = 0;

    bool operator==(const Job&) const = default;
};

struct Schedule {
    Minutes shift_start = 0;
    Minutes shift_length = 0;
    std::map<std::string, std::vector<Job>> lines;

    std::size_t job_count() const;
    /// (line id, position) of an order, if scheduled.
    std::optional<std::pair<std::string, std::size_t>> find(const std::string& order_id) const;
    bool operator==(const Schedule&) const = default;
};

/// Appends jobs to one line with serial placement semantics.
///
/// Processing starts once the line is free, the changeover from the previous
/// family has elapsed and the order is released. The changeover segment is
/// placed directly before processing, so any idle gap precedes it.
class LinePlacer {
  public:
    LinePlacer(Minutes ready_at, std::string last_family)
        : finish_(ready_at), last_family_(std::move(last_family)) {}

    Job place(const Order& order, const Recipe& recipe, Minutes duration,
              const ChangeoverMatrix& changeovers);

    Minutes finish() const { return finish_; }
    const std::string& last_family() const { return last_family_; }

  private:
    Minutes finish_;
    std::string last_family_;
};

std::vector<Violation> validate_schedule(const Schedule& schedule, const PlantState& plant,
                                         const Catalog& catalog);

struct MetricsReport {
    std::map<std::string, Minutes> per_line_usage;
    Minutes total_usage = 0;
    std::map<std::string, double> per_line_utilization;
    double utilization_stddev = 0.0;
    double expected_failure_cost = 0.0;
    Minutes total_tardiness = 0;

    bool operator==(const MetricsReport&) const = default;
};

/// Failure probability for producing `recipe` on `line` right after `prev_family`.
using RateFn = std::function<double(const std::string& recipe, const std::string& line,
                                    const std::string& prev_family)>;

struct MetricsContext {
    const Catalog* catalog = nullptr;
    const PlantState* plant = nullptr;
    RateFn rate;               // empty: no failure cost
    double rework_factor = 1.0;
};

/// Lines reported are the plant's Available lines plus any line carrying jobs.
MetricsReport compute_metrics(const Schedule& schedule, const MetricsContext& ctx);

double population_stddev(const std::vector<double>& values);

/// Greedy list scheduling used as the historic reference schedule.
Schedule baseline_schedule(const PlantState& plant, const Catalog& catalog);

/// Orders that have no compatible Available line.
std::vector<std::string> stranded_orders(const PlantState& plant, const Catalog& catalog);

}  // namespace resched
