#include "resched/analytics.hpp"

#include <fstream>
#include <sstream>

#include "resched/digest.hpp"

namespace resched::analytics {

using nlohmann::json;
using nlohmann::ordered_json;

std::string LogicVersion::id() const { return "mt" + std::to_string(min_trials); }

LogicVersion LogicVersion::parse(const std::string& text) {
    if (text.empty() || text == "default") return {};
    if (text.size() > 2 && text.rfind("mt", 0) == 0) {
        try {
            std::size_t used = 0;
            const int n = std::stoi(text.substr(2), &used);
            if (used == text.size() - 2 && n >= 1) return LogicVersion{n};
        } catch (const std::exception&) {
        }
    }
    throw Error("unknown logic version '" + text + "' (expected 'default' or 'mt<N>')");
}

const char* to_string(BackoffLevel level) {
    switch (level) {
        case BackoffLevel::Full: return "Full";
        case BackoffLevel::RecipeLine: return "RecipeLine";
        case BackoffLevel::Recipe: return "Recipe";
        case BackoffLevel::Global: return "Global";
    }
    return "?";
}

double smoothed_rate(std::uint64_t trials, std::uint64_t failures) {
    return (static_cast<double>(failures) + kPriorAlpha) /
           (static_cast<double>(trials) + kPriorAlpha + kPriorBeta);
}

void apply_in_place(AnalyticsState& state, const Event& event) {
    if (event.seq != state.last_applied_seq + 1)
        throw Error("out-of-order apply: state at seq " + std::to_string(state.last_applied_seq) +
                    ", event seq " + std::to_string(event.seq));
    if (!state.first_ts) state.first_ts = event.ts;
    state.last_ts = event.ts;

    if (const auto* b = std::get_if<BatchCompleted>(&event.payload)) {
        const std::uint64_t failed = b->outcome == BatchOutcome::Failed ? 1 : 0;
        for (Counts* c : {&state.full[FullKey{b->recipe_id, b->line_id, b->prev_family}],
                          &state.recipe_line[{b->recipe_id, b->line_id}],
                          &state.recipe[b->recipe_id], &state.global}) {
            c->trials += 1;
            c->failures += failed;
        }
        state.last_batch_seq = event.seq;
    } else if (const auto* f = std::get_if<DeviceFailure>(&event.payload)) {
        if (!f->duplicate) state.line_failures[f->line_id] += 1;
    }
    state.last_applied_seq = event.seq;
}

AnalyticsState apply(AnalyticsState state, const Event& event) {
    apply_in_place(state, event);
    return state;
}

FailureRateEstimate failure_rate(const AnalyticsState& state, const std::string& recipe,
                                 const std::string& line, const std::string& prev_family) {
    FailureRateEstimate est;
    est.key = FullKey{recipe, line, prev_family};
    const auto min_trials = static_cast<std::uint64_t>(state.logic.min_trials);

    auto pick = [&](const Counts& c, BackoffLevel level) {
        est.trials = c.trials;
        est.failures = c.failures;
        est.rate = smoothed_rate(c.trials, c.failures);
        est.backoff_level = level;
    };
    if (auto it = state.full.find(est.key); it != state.full.end() && it->second.trials >= min_trials)
        pick(it->second, BackoffLevel::Full);
    else if (auto rl = state.recipe_line.find({recipe, line});
             rl != state.recipe_line.end() && rl->second.trials >= min_trials)
        pick(rl->second, BackoffLevel::RecipeLine);
    else if (auto r = state.recipe.find(recipe); r != state.recipe.end() && r->second.trials >= min_trials)
        pick(r->second, BackoffLevel::Recipe);
    else
        pick(state.global, BackoffLevel::Global);
    return est;
}

LineHazard line_hazard(const AnalyticsState& state, const std::string& line) {
    LineHazard h;
    h.line_id = line;
    h.observed_minutes = state.observed_minutes();
    auto it = state.line_failures.find(line);
    h.failure_events = it == state.line_failures.end() ? 0 : it->second;
    h.hazard = (static_cast<double>(h.failure_events) + 1.0) /
               ((static_cast<double>(h.observed_minutes) + 60.0) / 60.0);
    return h;
}

RateFn rate_fn(const AnalyticsState& state) {
    return [state](const std::string& recipe, const std::string& line, const std::string& prev) {
        return failure_rate(state, recipe, line, prev).rate;
    };
}

AnalyticsState replay(const std::vector<Event>& events, LogicVersion logic) {
    AnalyticsState state;
    state.logic = logic;
    for (const auto& e : events) apply_in_place(state, e);
    return state;
}

AnalyticsState replay(const EventLog& log, LogicVersion logic) {
    return replay(log.read_from(1), logic);
}

namespace {

ordered_json counts_json(const Counts& c) { return ordered_json::array({c.trials, c.failures}); }

Counts counts_from(const json& j) {
    return Counts{j.at(0).get<std::uint64_t>(), j.at(1).get<std::uint64_t>()};
}

}  // namespace

ordered_json to_json(const AnalyticsState& state) {
    ordered_json j;
    j["logic_version"] = state.logic.id();
    j["last_applied_seq"] = state.last_applied_seq;
    j["last_batch_seq"] = state.last_batch_seq;
    j["first_ts"] = state.first_ts ? ordered_json(*state.first_ts) : ordered_json(nullptr);
    j["last_ts"] = state.last_ts;

    ordered_json counters;
    ordered_json full = ordered_json::array();
    for (const auto& [k, c] : state.full)
        full.push_back(ordered_json::array({k.recipe, k.line, k.prev_family, c.trials, c.failures}));
    counters["full"] = std::move(full);
    ordered_json rl = ordered_json::array();
    for (const auto& [k, c] : state.recipe_line)
        rl.push_back(ordered_json::array({k.first, k.second, c.trials, c.failures}));
    counters["recipe_line"] = std::move(rl);
    ordered_json r = ordered_json::array();
    for (const auto& [k, c] : state.recipe) r.push_back(ordered_json::array({k, c.trials, c.failures}));
    counters["recipe"] = std::move(r);
    counters["global"] = counts_json(state.global);
    j["counters"] = std::move(counters);

    ordered_json hazards;
    hazards["observed_minutes"] = state.observed_minutes();
    ordered_json lf = ordered_json::object();
    for (const auto& [line, n] : state.line_failures) lf[line] = n;
    hazards["line_failures"] = std::move(lf);
    j["hazards"] = std::move(hazards);
    return j;
}

AnalyticsState from_json(const json& j) {
    AnalyticsState s;
    s.logic = LogicVersion::parse(j.at("logic_version").get<std::string>());
    s.last_applied_seq = j.at("last_applied_seq").get<std::uint64_t>();
    s.last_batch_seq = j.at("last_batch_seq").get<std::uint64_t>();
    if (!j.at("first_ts").is_null()) s.first_ts = j.at("first_ts").get<Minutes>();
    s.last_ts = j.at("last_ts").get<Minutes>();
    const auto& c = j.at("counters");
    for (const auto& row : c.at("full"))
        s.full[FullKey{row.at(0).get<std::string>(), row.at(1).get<std::string>(),
                       row.at(2).get<std::string>()}] =
            Counts{row.at(3).get<std::uint64_t>(), row.at(4).get<std::uint64_t>()};
    for (const auto& row : c.at("recipe_line"))
        s.recipe_line[{row.at(0).get<std::string>(), row.at(1).get<std::string>()}] =
            Counts{row.at(2).get<std::uint64_t>(), row.at(3).get<std::uint64_t>()};
    for (const auto& row : c.at("recipe"))
        s.recipe[row.at(0).get<std::string>()] =
            Counts{row.at(1).get<std::uint64_t>(), row.at(2).get<std::uint64_t>()};
    s.global = counts_from(c.at("global"));
    for (const auto& [line, n] : j.at("hazards").at("line_failures").items())
        s.line_failures[line] = n.get<std::uint64_t>();
    return s;
}

void snapshot(const AnalyticsState& state, const std::string& path) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write snapshot '" + path + "'");
        out << to_json(state).dump() << "\n";
        if (!out) throw Error("cannot write snapshot '" + path + "'");
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot write snapshot '" + path + "'");
}

AnalyticsState restore(const std::string& path, const LogicVersion& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read snapshot '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const std::exception& ex) {
        throw Error("snapshot '" + path + "' unreadable: " + ex.what());
    }
    if (j.at("logic_version").get<std::string>() != expected.id())
        throw Error("snapshot from different logic, full replay required (snapshot " +
                    j.at("logic_version").get<std::string>() + ", running " + expected.id() + ")");
    return from_json(j);
}

ordered_json rate_table(const AnalyticsState& state) {
    ordered_json rows = ordered_json::array();
    for (const auto& [key, _] : state.full) {
        const auto est = failure_rate(state, key.recipe, key.line, key.prev_family);
        ordered_json row;
        row["recipe_id"] = key.recipe;
        row["line_id"] = key.line;
        row["prev_family"] = key.prev_family;
        row["trials"] = est.trials;
        row["failures"] = est.failures;
        row["rate"] = est.rate;
        row["backoff_level"] = to_string(est.backoff_level);
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string state_hash(const AnalyticsState& state) {
    return sha256_hex(to_json(state).dump() + "\n" + rate_table(state).dump());
}

}  // namespace resched::analytics
