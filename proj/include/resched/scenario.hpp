#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "resched/model.hpp"

namespace resched {

/// Ground-truth batch failure probabilities. Lookups fall back from
/// (recipe, line, prev_family) to (recipe, line, *) to (recipe, *, *) to the default.
struct TrueRates {
    static constexpr const char* kAny = "*";
    double default_rate = 0.0;
    std::map<std::tuple<std::string, std::string, std::string>, double> entries;

    double lookup(const std::string& recipe, const std::string& line,
                  const std::string& prev_family) const;
};

struct SensorSpec {
    std::string id;
    std::string line_id;
    double mean = 0.0;
    double stddev = 1.0;
    Minutes period = 30;
};

struct ScenarioConfig {
    std::string id;
    std::vector<std::string> lines;
    std::vector<Recipe> recipes;
    ChangeoverMatrix changeovers;
    std::vector<Order> orders;
    Minutes shift_start = 0;
    Minutes shift_length = 480;
    TrueRates true_rates;
    std::map<std::string, double> line_hazards;  // failures per hour
    std::uint64_t rng_seed = 1;
    Minutes repair_minutes = 60;
    std::vector<SensorSpec> sensors;

    /// Every problem found; empty means valid.
    std::vector<Violation> violations() const;
    /// Throws ValidationError listing every violation.
    void validate() const;

    Catalog catalog() const;
    /// All lines Available at shift start, every order open.
    PlantState initial_plant() const;
};

nlohmann::ordered_json to_json(const ScenarioConfig& c);
ScenarioConfig scenario_from_json(const nlohmann::json& j);
ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const ScenarioConfig& c, const std::string& path);

/// Synthesizes a valid desk-scale scenario; deterministic in `seed`.
ScenarioConfig generate_scenario(int lines, int recipes, int orders, std::uint64_t seed);

}  // namespace resched
