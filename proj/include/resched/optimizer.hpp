#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resched/analytics.hpp"
#include "resched/model.hpp"

namespace resched::opt {

struct ObjectiveWeights {
    double usage = 0.5;
    double balance = 0.2;
    double risk = 0.2;
    double tardiness = 0.1;

    void validate() const;
    bool operator==(const ObjectiveWeights&) const = default;
};

struct GaParams {
    int population = 64;
    int generations = 200;
    int stall_limit = 40;
    int tournament_size = 3;
    double crossover_rate = 0.9;
    double swap_mutation_rate = 0.1;
    double reassign_mutation_rate = 0.1;
    int elites = 2;
    std::uint64_t seed = 1;

    void validate() const;
    bool operator==(const GaParams&) const = default;
};

struct FitnessVector {
    double total_usage = 0.0;
    double utilization_stddev = 0.0;
    double expected_failure_cost = 0.0;
    double total_tardiness = 0.0;

    static FitnessVector from(const MetricsReport& m);
    bool operator==(const FitnessVector&) const = default;
};

struct Chromosome {
    std::vector<std::string> perm;
    std::map<std::string, std::string> assign;
    bool operator==(const Chromosome&) const = default;
};

/// Serial schedule generation: scan perm, append each order to its assigned line.
Schedule decode(const Chromosome& c, const PlantState& plant, const Catalog& catalog);

/// Weighted sum of baseline-normalized objectives; lower is better.
double scalar_fitness(const FitnessVector& fv, const ObjectiveWeights& w, const FitnessVector& baseline);

struct OptimizeResult {
    Schedule schedule;
    FitnessVector fitness;
    FitnessVector baseline_fitness;
    double scalar = 0.0;
    double baseline_scalar = 0.0;
    int generations_run = 0;
    std::vector<double> best_history;  // incumbent after the initial population and each generation
    Chromosome best;
};

/// Genetic search seeded with the greedy baseline. Throws ValidationError if an
/// open order has no compatible Available line.
OptimizeResult optimize_reactive(const PlantState& plant, const Catalog& catalog, const RateFn& rate,
                                 const ObjectiveWeights& weights, const GaParams& params);

struct Contingency {
    std::string line_id;
    double hazard = 0.0;
    std::uint64_t seed = 0;
    bool feasible = false;
    std::vector<std::string> stranded;
    std::optional<OptimizeResult> result;
    std::string fingerprint;  // fingerprint of the hypothetical plant with the line failed
};

/// Plant with `line` marked Failed; its in-flight order becomes open again.
PlantState with_line_failed(const PlantState& plant, const std::string& line);

/// Digest identifying the plant state and rate knowledge a contingency depends on.
/// Lines that are not Available contribute only their id and state.
std::string plant_fingerprint(const PlantState& plant, const analytics::AnalyticsState& analytics);

/// Seed used for the contingency of `line`.
std::uint64_t contingency_seed(std::uint64_t master, const std::string& line);

/// Contingency schedules for the k Available lines most likely to fail next.
std::map<std::string, Contingency> optimize_predictive(const PlantState& plant, const Catalog& catalog,
                                                       const analytics::AnalyticsState& analytics,
                                                       const ObjectiveWeights& weights,
                                                       const GaParams& params, int k);

struct OracleResult {
    Schedule schedule;
    FitnessVector fitness;
    double scalar = 0.0;
    Chromosome best;
    std::uint64_t evaluated = 0;
};

inline constexpr std::size_t kOracleMaxOrders = 8;
inline constexpr std::size_t kOracleMaxLines = 3;

/// Exhaustive search over assignments and per-line orderings.
OracleResult brute_force_optimum(const PlantState& plant, const Catalog& catalog, const RateFn& rate,
                                 const ObjectiveWeights& weights);

nlohmann::ordered_json to_json(const FitnessVector& fv);
nlohmann::ordered_json to_json(const ObjectiveWeights& w);
nlohmann::ordered_json to_json(const GaParams& p);
/// Fields absent from `j` keep the values of `base`.
ObjectiveWeights weights_from_json(const nlohmann::json& j, ObjectiveWeights base = {});
GaParams params_from_json(const nlohmann::json& j, GaParams base = {});

}  // namespace resched::opt
