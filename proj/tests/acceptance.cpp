// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <thread>

#include <httplib.h>

#include "resched/analytics.hpp"
#include "resched/experiment.hpp"
#include "resched/http_api.hpp"
#include "resched/optimizer.hpp"
#include "resched/service.hpp"
#include "resched/simulator.hpp"
#include "support.hpp"

using namespace resched;
using namespace testsupport;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(int n, const char* name, bool ok, const std::string& detail) {
    std::printf("[%s] %d %s: %s\n", ok ? "PASS" : "FAIL", n, name, detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

template <class Fn>
void guarded(int n, const char* name, Fn fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        report(n, name, false, std::string("exception: ") + e.what());
    }
}

// ---- 1 and 2: desk-scale comparison ------------------------------------------

void usage_and_harmonization() {
    const auto sc = load_scenario(resolve_scenario_path("desk-6x40"));
    std::vector<exp::RunReport> runs;
    double slowest = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        exp::RunOptions o;
        o.seed = seed;
        const auto t0 = Clock::now();
        runs.push_back(exp::run(sc, o).report);
        slowest = std::max(slowest, seconds_since(t0));
    }
    const auto s = exp::summarize(runs);
    report(1, "usage reduction", s.usage.median >= 10.0 && slowest <= 60.0,
           fmt("median %.2f%% over seeds 1..5 (need >= 10%%), slowest run %.2f s (limit 60 s)", s.usage.median, slowest));
    report(2, "utilization harmonization", s.stddev.median >= 30.0,
           fmt("median stddev reduction %.2f%% (need >= 30%%)", s.stddev.median));
}

// ---- 3: GA against exhaustive search ------------------------------------------

void oracle_equivalence() {
    int within = 0;
    double worst = 0;
    const auto t0 = Clock::now();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const auto sc = generate_scenario(2, 3, 7, seed);
        const auto plant = sc.initial_plant();
        const auto catalog = sc.catalog();
        const RateFn rate = [t = sc.true_rates](const std::string& r, const std::string& l, const std::string& p) {
            return t.lookup(r, l, p);
        };
        opt::GaParams ga;
        ga.population = 64;
        ga.generations = 500;
        ga.seed = seed;
        const opt::ObjectiveWeights w;
        const auto exact = opt::brute_force_optimum(plant, catalog, rate, w);
        const auto found = opt::optimize_reactive(plant, catalog, rate, w, ga);
        const double gap = (found.scalar - exact.scalar) / exact.scalar;
        worst = std::max(worst, gap);
        if (gap <= 0.01) ++within;
    }
    const double elapsed = seconds_since(t0);
    report(3, "oracle equivalence", within >= 19 && elapsed <= 30.0,
           fmt("%.0f/20 runs within 1%% of the optimum (need >= 19), worst gap %.4f%%, %.2f s (limit 30 s)", within,
               worst * 100, elapsed));
}

// ---- 4: replay determinism ---------------------------------------------------

void replay_determinism() {
    TempDir dir;
    bool ok = true;
    std::string detail;

    // A recorded experiment run: hash of the replayed file equals the live fold.
    const auto art = exp::run(load_scenario(resolve_scenario_path("tiny-7x2")), exp::RunOptions{});
    exp::write_run(art, dir.file("run"));
    const auto replayed = replay_log(dir.file("run/events.ndjson"), analytics::LogicVersion{});
    ok = ok && replayed.state.hash() == art.report.state_hash;

    // A live service session: its incremental hash equals a replay of its log.
    {
        svc::Config c;
        c.scenario = "desk-6x40";
        c.data_dir = dir.file("svc");
        c.sync = false;
        c.ga.generations = 40;
        svc::Service s(c);
        s.advance(90);
        s.inject_failure("L3", std::nullopt);
        s.advance(240);
        const auto r = replay_log(dir.file("svc/events.ndjson"), analytics::LogicVersion::parse(c.logic), c.situation_model);
        ok = ok && r.state.hash() == s.state_hash();
    }

    // Randomized sequences: snapshot-resume equals full replay, bit-exact.
    int sequences = 0;
    for (std::uint64_t seed = 1; seed <= 50; ++seed, ++sequences) {
        const auto events = numbered(random_events(seed, 400));
        const auto full = analytics::replay(events, analytics::LogicVersion{});
        const std::size_t cut = static_cast<std::size_t>(seed * 7 % events.size());
        analytics::AnalyticsState prefix;
        for (std::size_t i = 0; i < cut; ++i) analytics::apply_in_place(prefix, events[i]);
        analytics::snapshot(prefix, dir.file("snap.json"));
        auto resumed = analytics::restore(dir.file("snap.json"), analytics::LogicVersion{});
        for (std::size_t i = cut; i < events.size(); ++i) analytics::apply_in_place(resumed, events[i]);
        StateFold a, b;
        for (const auto& e : events) a.apply(e);
        for (const auto& e : events) b.apply(e);
        if (!(resumed == full) || analytics::state_hash(resumed) != analytics::state_hash(full) || a.hash() != b.hash()) {
            ok = false;
            detail = " (mismatch at sequence " + std::to_string(seed) + ")";
        }
    }
    report(4, "replay determinism", ok,
           "recorded run, live service and " + std::to_string(sequences) +
               " random sequences: hashes equal, snapshot-resume bit-exact" + detail);
}

// ---- 5: estimator convergence ------------------------------------------------

void estimator_convergence() {
    const int n = 2000;
    const double p = 0.2;
    double worst = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        ScenarioConfig c;
        c.id = "bernoulli";
        c.lines = {"L1"};
        c.recipes = {recipe("R", "F", {{"L1", 1}})};
        for (int i = 0; i < n; ++i) {
            char id[16];
            std::snprintf(id, sizeof id, "o%05d", i);
            c.orders.push_back(order(id, "R", 0, 10 * n));
        }
        c.shift_length = 10 * n;
        c.true_rates.default_rate = p;
        c.rng_seed = seed;
        sim::SimOptions o;
        o.hazards_enabled = false;
        o.sensors_enabled = false;
        auto init = sim::Simulator::init(c, o);
        auto& simulator = init.sim;
        EventLog log;
        log.append_batch(init.events);
        log.append(simulator.commit_schedule(baseline_schedule(simulator.plant_state(), simulator.catalog()), "p"));
        log.append_batch(simulator.step(c.shift_length));
        const auto state = analytics::replay(log, analytics::LogicVersion{});
        const auto est = analytics::failure_rate(state, "R", "L1", "F");
        if (est.trials != static_cast<std::uint64_t>(n) - 1) throw Error("expected " + std::to_string(n - 1) + " trials");
        worst = std::max(worst, std::fabs(est.rate - p));
    }
    report(5, "estimator convergence", worst <= 0.03,
           fmt("2000 simulated batches at p = 0.2, seeds 1..5: max |rate - 0.2| = %.4f (limit 0.03)", worst));
}

// ---- 6: reactive reconfiguration ----------------------------------------------

svc::Config desk_config() {
    svc::Config c = svc::Config::load(std::string(RESCHED_SOURCE_DIR) + "/config/service.json");
    c.data_dir.clear();
    return c;
}

struct ProposalCheck {
    bool ok = false;
    std::string why;
};

ProposalCheck check_proposal(const svc::Service& s, const nlohmann::ordered_json& response, const std::string& line) {
    if (response.at("proposals").size() != 1) return {false, "expected one proposal"};
    const std::string id = response.at("proposals")[0];
    for (const auto& p : s.proposal_list()) {
        if (p.id != id) continue;
        if (p.status != svc::ProposalStatus::Pending) return {false, "not Pending"};
        if (p.schedule.lines.count(line)) return {false, "uses the failed line"};
        std::set<std::string> covered;
        for (const auto& [_, jobs] : p.schedule.lines)
            for (const auto& j : jobs) covered.insert(j.order_id);
        for (const auto& l : p.plant.lines)
            if (!l.in_flight.empty()) covered.insert(l.in_flight);
        for (const auto& [order, fate] : s.order_fates())
            if (fate != sim::OrderFate::CompletedSuccess && fate != sim::OrderFate::CompletedFailed && !covered.count(order))
                return {false, "drops order " + order};
        return {true, p.trigger};
    }
    return {false, "proposal not found"};
}

void reactive_reconfiguration() {
    const auto catalog = load_scenario(resolve_scenario_path("desk-6x40")).catalog();
    auto valid = [&](const svc::Service& s, const std::string& id) {
        for (const auto& p : s.proposal_list())
            if (p.id == id) return validate_schedule(p.schedule, p.plant, catalog).empty();
        return false;
    };

    svc::Service cold(desk_config());
    cold.advance(120);
    auto t0 = Clock::now();
    const auto r = cold.inject_failure("L2", std::nullopt);
    const double cold_s = seconds_since(t0);
    const auto c1 = check_proposal(cold, r, "L2");
    const bool cold_ok = c1.ok && valid(cold, r.at("proposals")[0]) && cold_s <= 2.0;

    svc::Service warm(desk_config());
    warm.advance(120);
    const auto pred = warm.optimize(nlohmann::json{{"mode", "predictive"}, {"k", 1}});
    const std::string line = pred.at("contingencies").at(0).at("line");
    t0 = Clock::now();
    const auto w = warm.inject_failure(line, std::nullopt);
    const double warm_s = seconds_since(t0);
    const auto c2 = check_proposal(warm, w, line);
    const bool warm_ok = c2.ok && c2.why == "predictive:" + line && valid(warm, w.at("proposals")[0]) && warm_s <= 0.2;

    report(6, "reactive reconfiguration", cold_ok && warm_ok,
           "cold " + fmt("%.3f s (limit 2 s)", cold_s) + (c1.ok ? "" : " [" + c1.why + "]") + ", warm cache on " + line +
               " " + fmt("%.3f s (limit 0.2 s)", warm_s) + (c2.ok ? " via " + c2.why : " [" + c2.why + "]") +
               "; proposals Pending, failed line excluded, open orders retained, valid");
}

// ---- 7: predictive/reactive consistency ----------------------------------------

void predictive_consistency() {
    const auto sc = load_scenario(resolve_scenario_path("desk-6x40"));
    const auto catalog = sc.catalog();
    opt::GaParams ga;
    ga.generations = 60;
    ga.seed = 7;
    const analytics::AnalyticsState a;
    const auto plant = sc.initial_plant();
    const auto plans = opt::optimize_predictive(plant, catalog, a, opt::ObjectiveWeights{}, ga, 6);
    int equal = 0, total = 0;
    for (const auto& [line, c] : plans) {
        if (!c.feasible) continue;
        ++total;
        opt::GaParams p = ga;
        p.seed = opt::contingency_seed(ga.seed, line);
        const auto direct = opt::optimize_reactive(opt::with_line_failed(plant, line), catalog, analytics::rate_fn(a),
                                                   opt::ObjectiveWeights{}, p);
        if (c.result->schedule == direct.schedule && c.result->scalar == direct.scalar && c.seed == p.seed) ++equal;
    }
    report(7, "predictive/reactive consistency", total > 0 && equal == total,
           std::to_string(equal) + "/" + std::to_string(total) +
               " contingencies bit-identical to reactive runs on the failed state at the derived seed");
}

// ---- 8: validity and crash recovery ------------------------------------------

void validity_and_recovery() {
    std::size_t checked = 0, invalid = 0;
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
        const auto sc = generate_scenario(4, 6, 16, seed);
        const auto plant = perturbed_plant(sc, seed);
        const auto catalog = sc.catalog();
        opt::GaParams ga;
        ga.population = 24;
        ga.generations = 30;
        ga.seed = seed;
        auto check = [&](const Schedule& s) {
            ++checked;
            if (!validate_schedule(s, plant, catalog).empty()) ++invalid;
        };
        check(baseline_schedule(plant, catalog));
        const auto r = opt::optimize_reactive(plant, catalog, analytics::rate_fn(analytics::AnalyticsState{}),
                                              opt::ObjectiveWeights{}, ga);
        check(r.schedule);
        std::mt19937_64 rng(seed);
        const auto lines = plant.available_lines();
        for (int k = 0; k < 10; ++k) {
            opt::Chromosome c;
            c.perm = plant.open_orders;
            std::shuffle(c.perm.begin(), c.perm.end(), rng);
            for (const auto& id : c.perm) {
                std::vector<std::string> ok;
                for (const auto& l : lines)
                    if (catalog.recipe_of_order(id)->duration_on(l)) ok.push_back(l);
                c.assign[id] = ok[rng() % ok.size()];
            }
            check(opt::decode(c, plant, catalog));
        }
    }

    // Random operator adjustments through the service.
    TempDir dir;
    std::size_t adjusted = 0;
    bool recovered = false;
    {
        svc::Config c;
        c.scenario = "desk-6x40";
        c.data_dir = dir.file("svc");
        c.sync = false;
        c.ga.generations = 30;
        const auto catalog = load_scenario(resolve_scenario_path("desk-6x40")).catalog();
        std::string hash;
        std::vector<Event> events;
        std::vector<std::pair<std::string, svc::ProposalStatus>> proposals;
        std::string plant_json;
        {
            svc::Service s(c);
            s.advance(60);
            const std::string id = s.inject_failure("L4", std::nullopt).at("proposals").at(0);
            std::mt19937_64 rng(5);
            for (int k = 0; k < 40; ++k) {
                svc::Proposal p;
                for (const auto& q : s.proposal_list())
                    if (q.id == id) p = q;
                const auto it = std::next(p.schedule.lines.begin(), static_cast<long>(rng() % p.schedule.lines.size()));
                const auto& job = it->second[rng() % it->second.size()];
                const auto lines = p.plant.available_lines();
                const std::string target = lines[rng() % lines.size()];
                try {
                    s.adjust(id, {svc::Move{job.order_id, target, std::nullopt, std::nullopt}});
                } catch (const ValidationError&) {
                    continue;
                }
                for (const auto& q : s.proposal_list())
                    if (q.id == id) {
                        ++checked;
                        ++adjusted;
                        if (!validate_schedule(q.schedule, q.plant, catalog).empty()) ++invalid;
                    }
            }
            s.execute(id);
            s.advance(200);
            hash = s.state_hash();
            events = s.events();
            for (const auto& p : s.proposal_list()) proposals.emplace_back(p.id, p.status);
            plant_json = s.lines().dump();
        }
        svc::Service again(c);
        std::vector<std::pair<std::string, svc::ProposalStatus>> now;
        for (const auto& p : again.proposal_list()) now.emplace_back(p.id, p.status);
        recovered = again.state_hash() == hash && again.events() == events && now == proposals &&
                    again.lines().dump() == plant_json;
    }
    report(8, "schedule validity and recovery", invalid == 0 && adjusted > 0 && recovered,
           std::to_string(checked) + " baseline/GA/decode/adjust outputs, " + std::to_string(invalid) +
               " invalid (need 0); restart reproduces plant, analytics and proposals: " + (recovered ? "yes" : "no"));
}

// ---- 9: audit completeness ---------------------------------------------------

void audit_completeness() {
    TempDir dir;
    svc::Config c;
    c.scenario = "tiny-7x2";
    c.data_dir = dir.file("svc");
    c.sync = false;
    c.ga.generations = 20;
    c.tokens = {{"t", "planner"}};
    std::size_t calls = 0;
    std::size_t records = 0, on_disk = 0;
    {
        svc::Service service(c);
        svc::HttpApi api(service);
        const int port = api.bind("127.0.0.1", 0);
        std::thread server([&] { api.serve(); });
        httplib::Client client("127.0.0.1", port);
        client.set_bearer_token_auth("t");
        for (int i = 0; i < 100 && !client.Get("/api/health"); ++i)
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        httplib::Client anon("127.0.0.1", port);
        auto post = [&](httplib::Client& cl, const std::string& path, const std::string& body) {
            ++calls;
            cl.Post(path, body, "application/json");
        };
        post(client, "/api/simulator/advance", R"({"until": 30})");
        post(client, "/api/simulator/advance", R"({"until": 10})");
        post(anon, "/api/simulator/advance", R"({"until": 40})");
        post(client, "/api/simulator/inject-failure", R"({"line": "L1"})");
        post(client, "/api/simulator/inject-failure", R"({"line": "L9"})");
        post(client, "/api/optimize", R"({"mode": "reactive"})");
        post(client, "/api/optimize", "{broken");
        post(client, "/api/proposals/prop-000001/adjust", R"({"moves": [{"order_id": "nope", "line": "L2"}]})");
        post(client, "/api/proposals/prop-000002/execute", "{}");
        post(client, "/api/proposals/prop-000002/execute", "{}");
        post(client, "/api/situations/sit-000001/ack", "{}");
        post(client, "/api/events", R"({"ts": 50, "kind": "DeviceRecovered", "payload": {"line_id": "L1"}})");
        client.Get("/api/lines");
        client.Get("/api/proposals");
        api.stop();
        server.join();
        records = service.audit_records().size();
    }
    std::ifstream in(dir.file("svc/audit.ndjson"));
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++on_disk;
    report(9, "audit completeness", records == calls && on_disk == calls,
           std::to_string(calls) + " mutating calls (accepted and rejected), " + std::to_string(records) +
               " audit records in memory, " + std::to_string(on_disk) + " on disk (need exactly one each)");
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    guarded(1, "usage reduction", usage_and_harmonization);
    guarded(3, "oracle equivalence", oracle_equivalence);
    guarded(4, "replay determinism", replay_determinism);
    guarded(5, "estimator convergence", estimator_convergence);
    guarded(6, "reactive reconfiguration", reactive_reconfiguration);
    guarded(7, "predictive/reactive consistency", predictive_consistency);
    guarded(8, "schedule validity and recovery", validity_and_recovery);
    guarded(9, "audit completeness", audit_completeness);
    std::printf("%d failing, %.1f s total\n", failures, seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
