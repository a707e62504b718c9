#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resched/event_log.hpp"
#include "resched/model.hpp"

namespace resched::analytics {

inline constexpr double kPriorAlpha = 1.0;
inline constexpr double kPriorBeta = 9.0;

/// Processing rules the state was computed under. Changing them requires a full replay.
struct LogicVersion {
    int min_trials = 5;

    std::string id() const;
    /// "default" or "mt<N>" (minimum trials for a backoff level to be trusted).
    static LogicVersion parse(const std::string& text);
    bool operator==(const LogicVersion&) const = default;
};

struct Counts {
    std::uint64_t trials = 0;
    std::uint64_t failures = 0;
    bool operator==(const Counts&) const = default;
};

struct FullKey {
    std::string recipe;
    std::string line;
    std::string prev_family;
    auto operator<=>(const FullKey&) const = default;
};

enum class BackoffLevel { Full, RecipeLine, Recipe, Global };
const char* to_string(BackoffLevel level);

struct FailureRateEstimate {
    FullKey key;
    std::uint64_t trials = 0;
    std::uint64_t failures = 0;
    double rate = 0.0;
    BackoffLevel backoff_level = BackoffLevel::Global;
};

struct LineHazard {
    std::string line_id;
    Minutes observed_minutes = 0;
    std::uint64_t failure_events = 0;
    double hazard = 0.0;  // failures per hour
};

struct AnalyticsState {
    LogicVersion logic;
    std::uint64_t last_applied_seq = 0;
    std::uint64_t last_batch_seq = 0;  // last event that changed failure counters
    std::optional<Minutes> first_ts;
    Minutes last_ts = 0;
    std::map<FullKey, Counts> full;
    std::map<std::pair<std::string, std::string>, Counts> recipe_line;
    std::map<std::string, Counts> recipe;
    Counts global;
    std::map<std::string, std::uint64_t> line_failures;

    Minutes observed_minutes() const { return first_ts ? last_ts - *first_ts : 0; }
    bool operator==(const AnalyticsState&) const = default;
};

/// (failures + alpha) / (trials + alpha + beta)
double smoothed_rate(std::uint64_t trials, std::uint64_t failures);

void apply_in_place(AnalyticsState& state, const Event& event);
AnalyticsState apply(AnalyticsState state, const Event& event);

FailureRateEstimate failure_rate(const AnalyticsState& state, const std::string& recipe,
                                 const std::string& line, const std::string& prev_family);
LineHazard line_hazard(const AnalyticsState& state, const std::string& line);

/// Rate function backed by a copy of the state.
RateFn rate_fn(const AnalyticsState& state);

AnalyticsState replay(const std::vector<Event>& events, LogicVersion logic);
AnalyticsState replay(const EventLog& log, LogicVersion logic);

nlohmann::ordered_json to_json(const AnalyticsState& state);
AnalyticsState from_json(const nlohmann::json& j);

void snapshot(const AnalyticsState& state, const std::string& path);
/// Throws if the snapshot was written under a different logic version.
AnalyticsState restore(const std::string& path, const LogicVersion& expected);

/// Rate table over every observed full key, as served by the API.
nlohmann::ordered_json rate_table(const AnalyticsState& state);

/// Hex digest of the canonical state plus its derived rate table.
std::string state_hash(const AnalyticsState& state);

}  // namespace resched::analytics
