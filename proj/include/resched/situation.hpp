#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "resched/analytics.hpp"
#include "resched/event_log.hpp"

namespace resched::situation {

enum class SituationKind {
    LineUnavailable,
    LineRecovered,
    HighRiskChangeover,
    SensorAnomaly,
    ScheduleInfeasible,
};

const char* to_string(SituationKind k);
SituationKind situation_kind_from_string(const std::string& s);

struct Situation {
    std::string id;
    SituationKind kind = SituationKind::LineUnavailable;
    Minutes detected_at = 0;
    std::uint64_t detected_seq = 0;
    std::vector<std::uint64_t> evidence;
    double reliability = 0.0;
    bool requires_reconfiguration = false;
    std::string subject;  // line id, "order@line", or sensor id
    bool active = true;

    bool operator==(const Situation&) const = default;
};

/// Tunable rule parameters for the typed situation rules.
struct SituationModel {
    int debounce_k = 3;
    double emit_threshold = 0.8;
    double anomaly_z = 3.0;
    std::size_t anomaly_window = 20;
    double risk_threshold = 0.25;

    void validate() const;
    bool operator==(const SituationModel&) const = default;
};

struct Observation {
    std::uint64_t seq = 0;
    bool consistent = true;
    double trust = 1.0;
    bool operator==(const Observation&) const = default;
};

/// Fraction of consistent observations times their mean source trust; 0 for an empty window.
double check_reliability(const SituationModel& model, std::span<const Observation> window);

struct SituationState {
    std::vector<Situation> history;  // every emitted situation, in emission order
    std::map<std::pair<SituationKind, std::string>, std::size_t> active;  // -> history index
    std::map<std::string, LineState> believed;                            // line beliefs
    std::map<std::string, std::vector<Observation>> pending_failures;     // debounce windows
    std::map<std::string, std::deque<double>> sensor_windows;
    std::map<std::string, std::string> order_recipe;
    std::vector<PlannedJob> plan;      // last committed schedule
    std::set<std::string> completed;   // orders with a BatchCompleted
    std::uint64_t next_id = 1;
    std::uint64_t skipped = 0;         // malformed events ignored
    std::uint64_t suppressed = 0;      // hypotheses scoring below the threshold

    bool operator==(const SituationState&) const = default;
};

struct ObserveResult {
    std::vector<Situation> emitted;
    std::vector<std::string> cleared;  // ids deactivated by this event
};

/// Advances `state` by one event; analytics must already include that event.
ObserveResult observe(const SituationModel& model, SituationState& state, const Event& event,
                      const analytics::AnalyticsState& analytics);

/// Active situations ordered by detection time (ties by emission order).
std::vector<Situation> active_situations(const SituationState& state);

/// Operator acknowledgement of a LineRecovered situation. Returns false if the id is
/// not an active LineRecovered situation.
bool acknowledge(SituationState& state, const std::string& id);

nlohmann::ordered_json to_json(const Situation& s);
Situation situation_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const SituationModel& m);
SituationModel model_from_json(const nlohmann::json& j);

/// Digest of the emitted history and the currently active set.
std::string state_hash(const SituationState& state);

}  // namespace resched::situation
