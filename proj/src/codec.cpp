#include "resched/codec.hpp"

namespace resched {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json to_json(const Schedule& s) {
    ordered_json j;
    j["shift_start"] = s.shift_start;
    j["shift_length"] = s.shift_length;
    ordered_json lines = ordered_json::object();
    for (const auto& [line, jobs] : s.lines) {
        ordered_json arr = ordered_json::array();
        for (const auto& job : jobs)
            arr.push_back({{"order_id", job.order_id},
                           {"changeover_start", job.changeover_start},
                           {"processing_start", job.processing_start},
                           {"end", job.end}});
        lines[line] = std::move(arr);
    }
    j["lines"] = std::move(lines);
    return j;
}

Schedule schedule_from_json(const json& j) {
    try {
        Schedule s;
        s.shift_start = j.at("shift_start").get<Minutes>();
        s.shift_length = j.at("shift_length").get<Minutes>();
        for (const auto& [line, jobs] : j.at("lines").items())
            for (const auto& job : jobs)
                s.lines[line].push_back(Job{job.at("order_id").get<std::string>(),
                                            job.at("changeover_start").get<Minutes>(),
                                            job.at("processing_start").get<Minutes>(),
                                            job.at("end").get<Minutes>()});
        return s;
    } catch (const json::exception& e) {
        throw Error(std::string("malformed schedule: ") + e.what());
    }
}

ordered_json to_json(const MetricsReport& m) {
    ordered_json j;
    j["per_line_usage"] = m.per_line_usage;
    j["total_usage"] = m.total_usage;
    j["per_line_utilization"] = m.per_line_utilization;
    j["utilization_stddev"] = m.utilization_stddev;
    j["expected_failure_cost"] = m.expected_failure_cost;
    j["total_tardiness"] = m.total_tardiness;
    return j;
}

ordered_json to_json(const PlantState& p) {
    ordered_json j;
    j["shift_start"] = p.shift_start;
    j["shift_length"] = p.shift_length;
    j["clock"] = p.clock;
    ordered_json lines = ordered_json::array();
    for (const auto& l : p.lines)
        lines.push_back({{"id", l.id},
                         {"state", to_string(l.state)},
                         {"ready_at", l.ready_at},
                         {"last_family", l.last_family},
                         {"in_flight", l.in_flight}});
    j["lines"] = std::move(lines);
    j["open_orders"] = p.open_orders;
    return j;
}

ordered_json to_json(const std::vector<Violation>& vs) {
    ordered_json arr = ordered_json::array();
    for (const auto& v : vs)
        arr.push_back({{"rule", v.rule}, {"order_id", v.order_id}, {"line_id", v.line_id}, {"detail", v.detail}});
    return arr;
}

}  // namespace resched
