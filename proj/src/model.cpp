#include "resched/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <tuple>

namespace resched {

std::string Violation::describe() const {
    std::ostringstream os;
    os << rule;
    if (!line_id.empty()) os << " on " << line_id;
    if (!order_id.empty()) os << " (order " << order_id << ")";
    if (!detail.empty()) os << ": " << detail;
    return os.str();
}

namespace {

std::string join_violations(const std::string& what, const std::vector<Violation>& vs) {
    std::ostringstream os;
    os << what;
    for (const auto& v : vs) os << "\n  - " << v.describe();
    return os.str();
}

}  // namespace

ValidationError::ValidationError(std::string what, std::vector<Violation> violations)
    : Error(join_violations(what, violations)), violations_(std::move(violations)) {}

const char* to_string(LineState s) {
    switch (s) {
        case LineState::Available: return "Available";
        case LineState::Failed: return "Failed";
        case LineState::Maintenance: return "Maintenance";
    }
    return "?";
}

LineState line_state_from_string(const std::string& s) {
    if (s == "Available") return LineState::Available;
    if (s == "Failed") return LineState::Failed;
    if (s == "Maintenance") return LineState::Maintenance;
    throw Error("unknown line state '" + s + "'");
}

std::optional<Minutes> Recipe::duration_on(const std::string& line) const {
    auto it = durations.find(line);
    if (it == durations.end()) return std::nullopt;
    return it->second;
}

Minutes ChangeoverMatrix::minutes(const std::string& from, const std::string& to) const {
    if (from.empty()) return 0;
    auto it = entries.find({from, to});
    if (it != entries.end()) return it->second;
    return from == to ? 0 : default_minutes;
}

const Recipe* Catalog::recipe(const std::string& id) const {
    auto it = recipes.find(id);
    return it == recipes.end() ? nullptr : &it->second;
}

const Order* Catalog::order(const std::string& id) const {
    auto it = orders.find(id);
    return it == orders.end() ? nullptr : &it->second;
}

const Recipe* Catalog::recipe_of_order(const std::string& order_id) const {
    const Order* o = order(order_id);
    return o ? recipe(o->recipe_id) : nullptr;
}

const LineStatus* PlantState::line(const std::string& id) const {
    auto it = std::find_if(lines.begin(), lines.end(), [&](const auto& l) { return l.id == id; });
    return it == lines.end() ? nullptr : &*it;
}

LineStatus* PlantState::line(const std::string& id) {
    auto it = std::find_if(lines.begin(), lines.end(), [&](const auto& l) { return l.id == id; });
    return it == lines.end() ? nullptr : &*it;
}

std::vector<std::string> PlantState::available_lines() const {
    std::vector<std::string> out;
    for (const auto& l : lines)
        if (l.state == LineState::Available) out.push_back(l.id);
    return out;
}

std::size_t Schedule::job_count() const {
    std::size_t n = 0;
    for (const auto& [_, jobs] : lines) n += jobs.size();
    return n;
}

std::optional<std::pair<std::string, std::size_t>> Schedule::find(const std::string& order_id) const {
    for (const auto& [line, jobs] : lines)
        for (std::size_t i = 0; i < jobs.size(); ++i)
            if (jobs[i].order_id == order_id) return std::make_pair(line, i);
    return std::nullopt;
}

Job LinePlacer::place(const Order& order, const Recipe& recipe, Minutes duration,
                      const ChangeoverMatrix& changeovers) {
    const Minutes co = changeovers.minutes(last_family_, recipe.family);
    Job job;
    job.order_id = order.id;
    job.processing_start = std::max(finish_ + co, order.release);
    job.changeover_start = job.processing_start - co;
    job.end = job.processing_start + duration;
    finish_ = job.end;
    last_family_ = recipe.family;
    return job;
}

std::vector<Violation> validate_schedule(const Schedule& schedule, const PlantState& plant,
                                         const Catalog& catalog) {
    std::vector<Violation> out;
    auto add = [&](std::string rule, const std::string& order, const std::string& line,
                   std::string detail = {}) {
        out.push_back({std::move(rule), order, line, std::move(detail)});
    };

    const std::set<std::string> open(plant.open_orders.begin(), plant.open_orders.end());
    std::map<std::string, int> seen;

    for (const auto& [line_id, jobs] : schedule.lines) {
        const LineStatus* line = plant.line(line_id);
        if (!line) {
            add("unknown reference", "", line_id, "line does not exist");
            continue;
        }
        std::string prev_family = line->last_family;
        const Job* prev = nullptr;
        for (const auto& job : jobs) {
            ++seen[job.order_id];
            const Order* order = catalog.order(job.order_id);
            const Recipe* recipe = order ? catalog.recipe(order->recipe_id) : nullptr;
            if (!order || !recipe) {
                add("unknown reference", job.order_id, line_id,
                    order ? "recipe '" + order->recipe_id + "' does not exist" : "order does not exist");
                prev = &job;
                continue;
            }
            if (!open.count(job.order_id)) add("order not open", job.order_id, line_id);
            if (line->state != LineState::Available)
                add("line not available", job.order_id, line_id, to_string(line->state));

            auto duration = recipe->duration_on(line_id);
            if (!duration) {
                add("incompatible line", job.order_id, line_id,
                    "recipe " + recipe->id + " cannot run here");
            } else if (job.end - job.processing_start != *duration) {
                add("duration mismatch", job.order_id, line_id,
                    "expected " + std::to_string(*duration) + " min, got " +
                        std::to_string(job.end - job.processing_start));
            }
            if (job.processing_start < order->release)
                add("before release", job.order_id, line_id,
                    "starts " + std::to_string(job.processing_start) + " < release " +
                        std::to_string(order->release));
            const Minutes co = catalog.changeovers.minutes(prev_family, recipe->family);
            if (job.processing_start - job.changeover_start != co)
                add("changeover mismatch", job.order_id, line_id,
                    "expected " + std::to_string(co) + " min from '" + prev_family + "'");

            if (!prev) {
                if (job.changeover_start < line->ready_at)
                    add("line busy", job.order_id, line_id,
                        "line free at " + std::to_string(line->ready_at));
            } else if (job.changeover_start < prev->changeover_start) {
                add("unsorted", job.order_id, line_id);
            } else if (job.changeover_start < prev->end) {
                add("overlap", job.order_id, line_id,
                    "[" + std::to_string(prev->changeover_start) + "," + std::to_string(prev->end) +
                        "] and [" + std::to_string(job.changeover_start) + "," +
                        std::to_string(job.end) + "]");
            }
            prev_family = recipe->family;
            prev = &job;
        }
    }

    for (const auto& [order, count] : seen)
        if (count > 1) add("duplicate order", order, "", std::to_string(count) + " placements");
    for (const auto& order : open)
        if (!seen.count(order)) add("missing order", order, "");
    return out;
}

double population_stddev(const std::vector<double>& values) {
    if (values.empty()) return 0.0;
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) sq += (v - mean) * (v - mean);
    return std::sqrt(sq / static_cast<double>(values.size()));
}

MetricsReport compute_metrics(const Schedule& schedule, const MetricsContext& ctx) {
    if (schedule.shift_length <= 0) throw Error("degenerate shift");

    std::set<std::string> lines;
    if (ctx.plant)
        for (const auto& l : ctx.plant->lines)
            if (l.state == LineState::Available) lines.insert(l.id);
    for (const auto& [id, _] : schedule.lines) lines.insert(id);

    MetricsReport r;
    std::vector<double> utils;
    for (const auto& line_id : lines) {
        auto it = schedule.lines.find(line_id);
        Minutes usage = 0;
        Minutes busy = 0;
        double risk = 0.0;
        Minutes tardiness = 0;
        if (it != schedule.lines.end() && !it->second.empty()) {
            const LineStatus* status = ctx.plant ? ctx.plant->line(line_id) : nullptr;
            std::string prev_family = status ? status->last_family : std::string{};
            for (const auto& job : it->second) {
                busy += job.end - job.changeover_start;
                const Order* order = ctx.catalog ? ctx.catalog->order(job.order_id) : nullptr;
                const Recipe* recipe = order ? ctx.catalog->recipe(order->recipe_id) : nullptr;
                if (order) tardiness += std::max<Minutes>(0, job.end - order->due);
                if (recipe) {
                    if (ctx.rate) {
                        const double p = ctx.rate(recipe->id, line_id, prev_family);
                        risk += p * static_cast<double>(job.end - job.processing_start) *
                                ctx.rework_factor;
                    }
                    prev_family = recipe->family;
                }
            }
            usage = it->second.back().end - schedule.shift_start;
        }
        const double util = static_cast<double>(busy) / static_cast<double>(schedule.shift_length);
        r.per_line_usage[line_id] = usage;
        r.per_line_utilization[line_id] = util;
        r.total_usage += usage;
        r.expected_failure_cost += risk;
        r.total_tardiness += tardiness;
        utils.push_back(util);
    }
    r.utilization_stddev = population_stddev(utils);
    return r;
}

std::vector<std::string> stranded_orders(const PlantState& plant, const Catalog& catalog) {
    std::vector<std::string> out;
    for (const auto& id : plant.open_orders) {
        const Recipe* recipe = catalog.recipe_of_order(id);
        bool ok = false;
        if (recipe)
            for (const auto& l : plant.lines)
                if (l.state == LineState::Available && recipe->duration_on(l.id)) ok = true;
        if (!ok) out.push_back(id);
    }
    return out;
}

Schedule baseline_schedule(const PlantState& plant, const Catalog& catalog) {
    if (auto stranded = stranded_orders(plant, catalog); !stranded.empty()) {
        std::vector<Violation> vs;
        for (const auto& id : stranded)
            vs.push_back({"stranded order", id, "", "no compatible Available line"});
        throw ValidationError("orders cannot be scheduled", std::move(vs));
    }

    std::vector<const Order*> orders;
    for (const auto& id : plant.open_orders) orders.push_back(catalog.order(id));
    std::sort(orders.begin(), orders.end(), [](const Order* a, const Order* b) {
        return std::tie(a->priority, a->release, a->id) < std::tie(b->priority, b->release, b->id);
    });

    Schedule s;
    s.shift_start = plant.shift_start;
    s.shift_length = plant.shift_length;
    std::map<std::string, LinePlacer> placers;
    for (const auto& l : plant.lines)
        if (l.state == LineState::Available)
            placers.emplace(l.id, LinePlacer(std::max(l.ready_at, plant.shift_start), l.last_family));

    for (const Order* order : orders) {
        const Recipe& recipe = *catalog.recipe(order->recipe_id);
        LinePlacer* best = nullptr;
        std::string best_line;
        for (auto& [line_id, placer] : placers) {
            if (!recipe.duration_on(line_id)) continue;
            if (!best || placer.finish() < best->finish()) {
                best = &placer;
                best_line = line_id;
            }
        }
        s.lines[best_line].push_back(
            best->place(*order, recipe, *recipe.duration_on(best_line), catalog.changeovers));
    }
    return s;
}

}  // namespace resched
