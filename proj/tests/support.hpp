#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <unistd.h>

#include "resched/event_log.hpp"
#include "resched/model.hpp"
#include "resched/scenario.hpp"

namespace testsupport {

using namespace resched;

inline Recipe recipe(std::string id, std::string family, std::map<std::string, Minutes> durations) {
    return Recipe{std::move(id), std::move(family), std::move(durations)};
}

inline Order order(std::string id, std::string recipe_id, Minutes release = 0, Minutes due = 480, int priority = 1) {
    return Order{std::move(id), std::move(recipe_id), release, due, priority};
}

inline LineStatus line(std::string id, LineState state = LineState::Available, Minutes ready_at = 0,
                       std::string last_family = {}) {
    return LineStatus{std::move(id), state, ready_at, std::move(last_family), {}};
}

/// Small hand-built problem: catalog plus a fresh plant with every order open.
struct Problem {
    Catalog catalog;
    PlantState plant;

    Problem& add(const Recipe& r) {
        catalog.recipes[r.id] = r;
        return *this;
    }
    Problem& add(const Order& o) {
        catalog.orders[o.id] = o;
        plant.open_orders.push_back(o.id);
        return *this;
    }
    Problem& add(const LineStatus& l) {
        plant.lines.push_back(l);
        std::sort(plant.lines.begin(), plant.lines.end(),
                  [](const LineStatus& a, const LineStatus& b) { return a.id < b.id; });
        return *this;
    }
    Problem& changeover(const std::string& from, const std::string& to, Minutes m) {
        catalog.changeovers.entries[{from, to}] = m;
        return *this;
    }
};

inline Problem empty_problem(Minutes shift_length = 480) {
    Problem p;
    p.plant.shift_start = 0;
    p.plant.shift_length = shift_length;
    return p;
}

/// Unique scratch directory removed on destruction.
class TempDir {
  public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("resched-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string file(const std::string& name) const { return (path_ / name).string(); }

  private:
    std::filesystem::path path_;
};

// ---- independent oracles -------------------------------------------------

/// Changeover minutes straight from the matrix definition.
inline Minutes oracle_changeover(const Catalog& c, const std::string& from, const std::string& to) {
    if (from.empty()) return 0;
    auto it = c.changeovers.entries.find({from, to});
    if (it != c.changeovers.entries.end()) return it->second;
    return from == to ? 0 : c.changeovers.default_minutes;
}

/// Serial placement of a line's order sequence, written out from the placement rule.
inline std::vector<Job> oracle_place_line(const Catalog& c, const LineStatus& l, const std::vector<std::string>& ids,
                                          Minutes shift_start) {
    std::vector<Job> jobs;
    Minutes free_at = std::max(l.ready_at, shift_start);
    std::string family = l.last_family;
    for (const auto& id : ids) {
        const Order& o = c.orders.at(id);
        const Recipe& r = c.recipes.at(o.recipe_id);
        const Minutes co = oracle_changeover(c, family, r.family);
        Minutes start = free_at + co;
        if (o.release > start) start = o.release;
        jobs.push_back(Job{id, start - co, start, start + r.durations.at(l.id)});
        free_at = start + r.durations.at(l.id);
        family = r.family;
    }
    return jobs;
}

struct OracleMetrics {
    double total_usage = 0;
    double stddev = 0;
    double risk = 0;
    double tardiness = 0;
    std::map<std::string, double> usage;
    std::map<std::string, double> util;
};

/// Metrics from their definitions: usage span, busy-minute utilization, population
/// standard deviation, expected rework minutes and tardiness.
inline OracleMetrics oracle_metrics(const Schedule& s, const PlantState& plant, const Catalog& c, const RateFn& rate) {
    OracleMetrics m;
    std::set<std::string> lines;
    for (const auto& l : plant.lines)
        if (l.state == LineState::Available) lines.insert(l.id);
    for (const auto& [id, jobs] : s.lines) lines.insert(id);
    std::vector<double> utils;
    for (const auto& id : lines) {
        double usage = 0, busy = 0;
        auto it = s.lines.find(id);
        if (it != s.lines.end() && !it->second.empty()) {
            const LineStatus* st = plant.line(id);
            std::string prev = st ? st->last_family : "";
            for (const auto& j : it->second) {
                const Order& o = c.orders.at(j.order_id);
                const Recipe& r = c.recipes.at(o.recipe_id);
                busy += static_cast<double>(j.end - j.changeover_start);
                m.tardiness += static_cast<double>(std::max<Minutes>(0, j.end - o.due));
                if (rate) m.risk += rate(r.id, id, prev) * static_cast<double>(j.end - j.processing_start);
                prev = r.family;
            }
            usage = static_cast<double>(it->second.back().end - s.shift_start);
        }
        m.usage[id] = usage;
        m.util[id] = busy / static_cast<double>(s.shift_length);
        m.total_usage += usage;
        utils.push_back(m.util[id]);
    }
    double mean = 0;
    for (double u : utils) mean += u;
    mean /= utils.empty() ? 1.0 : static_cast<double>(utils.size());
    double var = 0;
    for (double u : utils) var += (u - mean) * (u - mean);
    m.stddev = utils.empty() ? 0.0 : std::sqrt(var / static_cast<double>(utils.size()));
    return m;
}

/// A scenario-derived plant with random perturbations: some lines down, some busy
/// until later, some with production history.
inline PlantState perturbed_plant(const ScenarioConfig& sc, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    PlantState p = sc.initial_plant();
    const auto catalog = sc.catalog();
    std::vector<std::string> families;
    for (const auto& r : sc.recipes) families.push_back(r.family);
    for (auto& l : p.lines) {
        if (rng() % 4 == 0) l.state = LineState::Failed;
        if (rng() % 3 == 0) l.ready_at = static_cast<Minutes>(rng() % 120);
        if (rng() % 2 == 0) l.last_family = families[rng() % families.size()];
    }
    if (std::none_of(p.lines.begin(), p.lines.end(), [](const auto& l) { return l.state == LineState::Available; }))
        p.lines.front().state = LineState::Available;
    // Keep only orders that still have a compatible Available line, and a random subset of those.
    std::vector<std::string> keep;
    for (const auto& id : p.open_orders) {
        const Recipe* r = catalog.recipe_of_order(id);
        bool ok = false;
        for (const auto& l : p.lines) ok = ok || (l.state == LineState::Available && r->duration_on(l.id));
        if (ok && rng() % 5 != 0) keep.push_back(id);
    }
    p.open_orders = keep;
    return p;
}

/// Random but well-formed event bodies with non-decreasing timestamps, seq 0.
inline std::vector<Event> random_events(std::uint64_t seed, std::size_t n) {
    std::mt19937_64 rng(seed);
    const std::vector<std::string> lines{"L1", "L2", "L3"};
    const std::vector<std::string> recipes{"R1", "R2", "R3", "R4"};
    const std::vector<std::string> families{"", "F1", "F2", "F3"};
    auto pick = [&](const std::vector<std::string>& v) { return v[rng() % v.size()]; };
    std::vector<Event> out;
    Minutes ts = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ts += static_cast<Minutes>(rng() % 4);
        Event e;
        e.ts = ts;
        switch (rng() % 10) {
            case 0:
                e.payload = DeviceFailure{pick(lines), 1.0, false, false};
                break;
            case 1:
                e.payload = DeviceRecovered{pick(lines)};
                break;
            case 2: {
                const std::string l = pick(lines);
                e.payload = SensorReading{l + ".status", l, rng() % 3 == 0 ? 1.0 : 0.0, 1.0};
                break;
            }
            case 3:
                e.payload = SensorReading{"T1", "", 50.0 + static_cast<double>(rng() % 100) / 10.0, 1.0};
                break;
            case 4:
                e.payload = OrderCreated{Order{"O" + std::to_string(i), pick(recipes), ts, ts + 300, 1}};
                break;
            default: {
                BatchCompleted b{"O" + std::to_string(i), pick(recipes), pick(lines), pick(families),
                                 ts > 30 ? ts - 30 : 0, ts,
                                 rng() % 5 == 0 ? BatchOutcome::Failed : BatchOutcome::Success};
                e.payload = b;
            }
        }
        out.push_back(std::move(e));
    }
    return out;
}

/// Assigns seqs 1..n in order.
inline std::vector<Event> numbered(std::vector<Event> events) {
    for (std::size_t i = 0; i < events.size(); ++i) events[i].seq = i + 1;
    return events;
}

}  // namespace testsupport
