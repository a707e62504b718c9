#pragma once

#include <nlohmann/json.hpp>

#include "resched/model.hpp"

namespace resched {

nlohmann::ordered_json to_json(const Schedule& s);
Schedule schedule_from_json(const nlohmann::json& j);

nlohmann::ordered_json to_json(const MetricsReport& m);
nlohmann::ordered_json to_json(const PlantState& p);
nlohmann::ordered_json to_json(const std::vector<Violation>& vs);

}  // namespace resched
