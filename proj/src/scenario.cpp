#include "resched/scenario.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "resched/rng.hpp"

namespace resched {

using nlohmann::json;
using nlohmann::ordered_json;

double TrueRates::lookup(const std::string& recipe, const std::string& line,
                         const std::string& prev_family) const {
    for (const auto& key : {std::make_tuple(recipe, line, prev_family),
                            std::make_tuple(recipe, line, std::string(kAny)),
                            std::make_tuple(recipe, std::string(kAny), std::string(kAny))}) {
        auto it = entries.find(key);
        if (it != entries.end()) return it->second;
    }
    return default_rate;
}

std::vector<Violation> ScenarioConfig::violations() const {
    std::vector<Violation> out;
    auto add = [&](std::string rule, std::string detail, std::string order = {}, std::string line = {}) {
        out.push_back({std::move(rule), std::move(order), std::move(line), std::move(detail)});
    };
    if (shift_length <= 0) add("degenerate shift", "shift_length must be > 0");
    if (lines.empty()) add("no lines", "scenario needs at least one line");
    const std::set<std::string> line_set(lines.begin(), lines.end());
    if (line_set.size() != lines.size()) add("duplicate line", "line ids must be unique");
    for (const auto& l : lines)
        if (l.empty()) add("invalid line", "empty line id");

    std::set<std::string> recipe_ids;
    for (const auto& r : recipes) {
        if (!recipe_ids.insert(r.id).second) add("duplicate recipe", r.id);
        if (r.durations.empty()) add("recipe without line", "recipe " + r.id + " has no compatible line");
        for (const auto& [line, d] : r.durations) {
            if (!line_set.count(line)) add("unknown reference", "recipe " + r.id + " names line", {}, line);
            if (d <= 0) add("invalid duration", "recipe " + r.id + " duration must be > 0", {}, line);
        }
    }
    for (const auto& [pair, m] : changeovers.entries)
        if (m < 0) add("invalid changeover", pair.first + "->" + pair.second + " is negative");
    if (changeovers.default_minutes < 0) add("invalid changeover", "default_minutes is negative");

    std::set<std::string> order_ids;
    for (const auto& o : orders) {
        if (!order_ids.insert(o.id).second) add("duplicate order", "order ids must be unique", o.id);
        if (!recipe_ids.count(o.recipe_id))
            add("unknown reference", "recipe '" + o.recipe_id + "' does not exist", o.id);
        if (o.release < 0) add("invalid order", "release must be >= 0", o.id);
        if (o.due < o.release) add("invalid order", "due must be >= release", o.id);
    }

    auto prob_ok = [](double p) { return std::isfinite(p) && p >= 0.0 && p <= 1.0; };
    if (!prob_ok(true_rates.default_rate)) add("invalid rate", "default true rate outside [0,1]");
    for (const auto& [key, p] : true_rates.entries)
        if (!prob_ok(p))
            add("invalid rate", std::get<0>(key) + "/" + std::get<1>(key) + "/" + std::get<2>(key) +
                                    " outside [0,1]");
    for (const auto& [line, h] : line_hazards) {
        if (!line_set.count(line)) add("unknown reference", "hazard names unknown line", {}, line);
        if (!(std::isfinite(h) && h >= 0.0)) add("invalid hazard", "must be >= 0", {}, line);
    }
    if (repair_minutes < 0) add("invalid repair time", "repair_minutes must be >= 0");
    for (const auto& s : sensors) {
        if (s.id.empty()) add("invalid sensor", "empty sensor id");
        if (s.period <= 0) add("invalid sensor", "sensor " + s.id + " period must be > 0");
        if (!s.line_id.empty() && !line_set.count(s.line_id))
            add("unknown reference", "sensor " + s.id + " names line", {}, s.line_id);
    }
    return out;
}

void ScenarioConfig::validate() const {
    if (auto vs = violations(); !vs.empty()) throw ValidationError("invalid scenario", std::move(vs));
}

Catalog ScenarioConfig::catalog() const {
    Catalog c;
    for (const auto& r : recipes) c.recipes[r.id] = r;
    for (const auto& o : orders) c.orders[o.id] = o;
    c.changeovers = changeovers;
    return c;
}

PlantState ScenarioConfig::initial_plant() const {
    PlantState p;
    p.shift_start = shift_start;
    p.shift_length = shift_length;
    p.clock = shift_start;
    std::vector<std::string> sorted = lines;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& l : sorted) p.lines.push_back(LineStatus{l, LineState::Available, shift_start, "", ""});
    for (const auto& o : orders) p.open_orders.push_back(o.id);
    std::sort(p.open_orders.begin(), p.open_orders.end());
    return p;
}

ordered_json to_json(const ScenarioConfig& c) {
    ordered_json j;
    j["id"] = c.id;
    j["rng_algorithm"] = std::string(kRngAlgorithm);
    j["rng_seed"] = c.rng_seed;
    j["shift_start"] = c.shift_start;
    j["shift_length"] = c.shift_length;
    j["repair_minutes"] = c.repair_minutes;
    j["lines"] = c.lines;
    ordered_json recipes = ordered_json::array();
    for (const auto& r : c.recipes) {
        ordered_json jr;
        jr["id"] = r.id;
        jr["family"] = r.family;
        ordered_json d = ordered_json::object();
        for (const auto& [line, m] : r.durations) d[line] = m;
        jr["durations"] = std::move(d);
        recipes.push_back(std::move(jr));
    }
    j["recipes"] = std::move(recipes);
    ordered_json co;
    co["default_minutes"] = c.changeovers.default_minutes;
    ordered_json entries = ordered_json::array();
    for (const auto& [pair, m] : c.changeovers.entries)
        entries.push_back(ordered_json{{"from", pair.first}, {"to", pair.second}, {"minutes", m}});
    co["entries"] = std::move(entries);
    j["changeovers"] = std::move(co);
    ordered_json orders = ordered_json::array();
    for (const auto& o : c.orders)
        orders.push_back(ordered_json{{"id", o.id},
                                      {"recipe_id", o.recipe_id},
                                      {"release", o.release},
                                      {"due", o.due},
                                      {"priority", o.priority}});
    j["orders"] = std::move(orders);
    ordered_json rates;
    rates["default"] = c.true_rates.default_rate;
    ordered_json rentries = ordered_json::array();
    for (const auto& [key, p] : c.true_rates.entries)
        rentries.push_back(ordered_json{{"recipe", std::get<0>(key)},
                                        {"line", std::get<1>(key)},
                                        {"prev_family", std::get<2>(key)},
                                        {"rate", p}});
    rates["entries"] = std::move(rentries);
    j["true_rates"] = std::move(rates);
    ordered_json hazards = ordered_json::object();
    for (const auto& [line, h] : c.line_hazards) hazards[line] = h;
    j["line_hazards"] = std::move(hazards);
    ordered_json sensors = ordered_json::array();
    for (const auto& s : c.sensors)
        sensors.push_back(ordered_json{{"id", s.id},
                                       {"line_id", s.line_id},
                                       {"mean", s.mean},
                                       {"stddev", s.stddev},
                                       {"period", s.period}});
    j["sensors"] = std::move(sensors);
    return j;
}

ScenarioConfig scenario_from_json(const json& j) {
    ScenarioConfig c;
    try {
        c.id = j.value("id", std::string("scenario"));
        c.rng_seed = j.value("rng_seed", std::uint64_t{1});
        c.shift_start = j.value("shift_start", Minutes{0});
        c.shift_length = j.at("shift_length").get<Minutes>();
        c.repair_minutes = j.value("repair_minutes", Minutes{60});
        c.lines = j.at("lines").get<std::vector<std::string>>();
        for (const auto& jr : j.at("recipes")) {
            Recipe r;
            r.id = jr.at("id").get<std::string>();
            r.family = jr.at("family").get<std::string>();
            r.durations = jr.at("durations").get<std::map<std::string, Minutes>>();
            c.recipes.push_back(std::move(r));
        }
        if (j.contains("changeovers")) {
            const auto& co = j.at("changeovers");
            c.changeovers.default_minutes = co.value("default_minutes", Minutes{0});
            for (const auto& e : co.value("entries", json::array()))
                c.changeovers.entries[{e.at("from").get<std::string>(), e.at("to").get<std::string>()}] =
                    e.at("minutes").get<Minutes>();
        }
        for (const auto& jo : j.at("orders"))
            c.orders.push_back(Order{jo.at("id").get<std::string>(), jo.at("recipe_id").get<std::string>(),
                                     jo.value("release", Minutes{0}), jo.at("due").get<Minutes>(),
                                     jo.value("priority", 0)});
        if (j.contains("true_rates")) {
            const auto& tr = j.at("true_rates");
            c.true_rates.default_rate = tr.value("default", 0.0);
            for (const auto& e : tr.value("entries", json::array()))
                c.true_rates.entries[{e.at("recipe").get<std::string>(),
                                      e.value("line", std::string(TrueRates::kAny)),
                                      e.value("prev_family", std::string(TrueRates::kAny))}] =
                    e.at("rate").get<double>();
        }
        c.line_hazards = j.value("line_hazards", std::map<std::string, double>{});
        for (const auto& js : j.value("sensors", json::array()))
            c.sensors.push_back(SensorSpec{js.at("id").get<std::string>(), js.value("line_id", std::string{}),
                                           js.value("mean", 0.0), js.value("stddev", 1.0),
                                           js.value("period", Minutes{30})});
    } catch (const json::exception& ex) {
        throw ValidationError("invalid scenario", {{"malformed scenario", "", "", ex.what()}});
    }
    return c;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("invalid scenario", {{"unreadable scenario", "", "", path}});
    json j;
    try {
        in >> j;
    } catch (const json::exception& ex) {
        throw ValidationError("invalid scenario", {{"malformed scenario", "", "", ex.what()}});
    }
    ScenarioConfig c = scenario_from_json(j);
    c.validate();
    return c;
}

void save_scenario(const ScenarioConfig& c, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write scenario '" + path + "'");
    out << to_json(c).dump(2) << "\n";
}

namespace {

std::string padded(const std::string& prefix, int i, int count) {
    const int width = static_cast<int>(std::to_string(count).size());
    std::string n = std::to_string(i);
    return prefix + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(n.size()))), '0') + n;
}

double round4(double x) { return std::round(x * 1e4) / 1e4; }

}  // namespace

ScenarioConfig generate_scenario(int n_lines, int n_recipes, int n_orders, std::uint64_t seed) {
    if (n_lines < 1 || n_recipes < 1 || n_orders < 1)
        throw ValidationError("invalid generator bounds",
                              {{"invalid bounds", "", "", "lines, recipes and orders must be >= 1"}});
    Xoshiro256 rng(derive_seed(seed, 100));
    ScenarioConfig c;
    c.id = "gen-" + std::to_string(n_lines) + "x" + std::to_string(n_recipes) + "x" +
           std::to_string(n_orders) + "-s" + std::to_string(seed);
    c.rng_seed = seed;
    c.shift_start = 0;
    c.shift_length = 480;
    c.repair_minutes = 60;
    for (int i = 1; i <= n_lines; ++i) c.lines.push_back(padded("L", i, n_lines));

    const int n_families = std::max(1, n_recipes / 3);
    std::vector<std::string> families;
    for (int i = 1; i <= n_families; ++i) families.push_back(padded("F", i, n_families));

    for (int i = 1; i <= n_recipes; ++i) {
        Recipe r;
        r.id = padded("R", i, n_recipes);
        r.family = families[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(n_families)))];
        for (const auto& line : c.lines)
            if (rng.uniform() < 0.7) r.durations[line] = rng.between(20, 90);
        if (r.durations.empty())
            r.durations[c.lines[static_cast<std::size_t>(rng.below(c.lines.size()))]] = rng.between(20, 90);
        c.recipes.push_back(std::move(r));
    }

    c.changeovers.default_minutes = 30;
    for (const auto& from : families)
        for (const auto& to : families)
            c.changeovers.entries[{from, to}] = from == to ? 0 : rng.between(0, 30);

    for (int i = 1; i <= n_orders; ++i) {
        Order o;
        o.id = padded("O", i, n_orders);
        o.recipe_id = c.recipes[static_cast<std::size_t>(rng.below(c.recipes.size()))].id;
        o.release = rng.uniform() < 0.7 ? 0 : rng.between(0, c.shift_length / 3);
        o.due = o.release + rng.between(c.shift_length / 2, c.shift_length);
        o.priority = static_cast<int>(rng.between(1, 3));
        c.orders.push_back(std::move(o));
    }

    c.true_rates.default_rate = 0.05;
    for (const auto& r : c.recipes)
        for (const auto& [line, _] : r.durations) {
            const double base = round4(0.02 + 0.10 * rng.uniform());
            c.true_rates.entries[{r.id, line, TrueRates::kAny}] = base;
            for (const auto& f : families)
                if (f != r.family)
                    c.true_rates.entries[{r.id, line, f}] =
                        std::min(0.3, round4(base + 0.05 + 0.13 * rng.uniform()));
        }

    for (const auto& line : c.lines) {
        c.line_hazards[line] = round4(0.005 + 0.025 * rng.uniform());
        c.sensors.push_back(SensorSpec{line + ".temp", "", round4(50.0 + 30.0 * rng.uniform()),
                                       round4(0.5 + 1.5 * rng.uniform()), 30});
    }
    return c;
}

}  // namespace resched
