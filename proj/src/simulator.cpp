#include "resched/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace resched::sim {

const char* to_string(OrderFate f) {
    switch (f) {
        case OrderFate::CompletedSuccess: return "completed-success";
        case OrderFate::CompletedFailed: return "completed-failed";
        case OrderFate::Pending: return "pending";
        case OrderFate::Stranded: return "stranded-by-failure";
    }
    return "?";
}

double outcome_draw(std::uint64_t master_seed, const std::string& order_id, const std::string& line_id,
                    std::uint64_t attempt) {
    const std::uint64_t stream = derive_seed(master_seed, kOutcomeStream);
    Xoshiro256 rng(derive_seed(stream, fnv1a64(order_id + '\x1f' + line_id) + attempt));
    return rng.uniform();
}

Simulator::Init Simulator::init(ScenarioConfig config, SimOptions options) {
    config.validate();
    Init out{Simulator{}, {}};
    Simulator& s = out.sim;
    s.config_ = std::move(config);
    s.catalog_ = s.config_.catalog();
    s.options_ = options;
    s.clock_ = s.config_.shift_start;
    for (const auto& line : s.config_.lines) {
        s.lines_[line] = LineRuntime{};
        s.sample_next_failure(line, s.clock_);
    }
    if (options.sensors_enabled)
        for (const auto& sensor : s.config_.sensors) {
            s.next_sensor_[sensor.id] = s.clock_ + sensor.period;
            s.sensor_rng_.emplace(sensor.id, Xoshiro256(derive_seed(derive_seed(s.config_.rng_seed, kSensorStream),
                                                                   fnv1a64(sensor.id))));
        }
    for (const auto& o : s.config_.orders) out.events.push_back(Event{0, s.clock_, OrderCreated{o}});
    return out;
}

void Simulator::sample_next_failure(const std::string& line, Minutes from) {
    auto& rt = lines_.at(line);
    rt.next_failure.reset();
    if (!options_.hazards_enabled) return;
    auto it = config_.line_hazards.find(line);
    if (it == config_.line_hazards.end() || it->second <= 0.0) return;
    Xoshiro256 rng(derive_seed(derive_seed(config_.rng_seed, kHazardStream), fnv1a64(line) + rt.hazard_draws++));
    const double delay = rng.exponential(it->second / 60.0);
    rt.next_failure = from + std::max<Minutes>(1, static_cast<Minutes>(std::ceil(delay)));
}

bool Simulator::in_flight(const SimJob& j) const {
    return j.status == JobStatus::Pending && j.job.processing_start < clock_ && clock_ < j.job.end;
}

std::string Simulator::last_family(const std::string& line, std::optional<std::size_t> skip) const {
    const SimJob* latest = nullptr;
    for (std::size_t i = 0; i < jobs_.size(); ++i) {
        const SimJob& j = jobs_[i];
        if (j.line_id != line || (skip && *skip == i)) continue;
        if (j.status != JobStatus::Completed && !in_flight(j)) continue;
        if (!latest || j.job.processing_start > latest->job.processing_start) latest = &j;
    }
    if (!latest) return {};
    const Recipe* r = catalog_.recipe_of_order(latest->job.order_id);
    return r ? r->family : std::string{};
}

void Simulator::strand_from(const std::string& line, Minutes at) {
    for (auto& j : jobs_)
        if (j.line_id == line && j.status == JobStatus::Pending && j.job.end > at)
            j.status = JobStatus::Stranded;
}

void Simulator::fail_line(const std::string& line, Minutes at) {
    lines_.at(line).state = LineState::Failed;
    strand_from(line, at);
}

std::vector<Event> Simulator::failure_events(const std::string& line, Minutes at, bool injected) const {
    std::vector<Event> out;
    out.push_back(Event{0, at, DeviceFailure{line, 1.0, injected, false}});
    for (int i = 0; i < options_.corroborating_readings; ++i)
        out.push_back(Event{0, at, SensorReading{line + ".status", line, 0.0, 1.0}});
    return out;
}

std::vector<Event> Simulator::step(Minutes until) {
    if (until < clock_)
        throw Error("cannot step to " + std::to_string(until) + ": clock is at " + std::to_string(clock_));
    std::vector<Event> events;
    for (;;) {
        std::optional<Minutes> next;
        auto consider = [&](Minutes t) {
            if (t <= until && (!next || t < *next)) next = t;
        };
        for (const auto& j : jobs_)
            if (j.status == JobStatus::Pending && lines_.at(j.line_id).state == LineState::Available)
                consider(j.job.end);
        for (const auto& [_, rt] : lines_) {
            if (rt.next_failure) consider(*rt.next_failure);
            if (rt.recovery_at) consider(*rt.recovery_at);
        }
        for (const auto& [_, t] : next_sensor_) consider(t);
        if (!next) break;
        const Minutes t = *next;
        clock_ = t;

        // Completions first, in line order (jobs_ is kept sorted by line, then time).
        for (std::size_t i = 0; i < jobs_.size(); ++i) {
            SimJob& j = jobs_[i];
            if (j.status != JobStatus::Pending || j.job.end != t ||
                lines_.at(j.line_id).state != LineState::Available)
                continue;
            const Order* order = catalog_.order(j.job.order_id);
            const Recipe* recipe = catalog_.recipe(order->recipe_id);
            BatchCompleted b;
            b.order_id = order->id;
            b.recipe_id = recipe->id;
            b.line_id = j.line_id;
            b.prev_family = last_family(j.line_id, i);
            b.start = j.job.processing_start;
            b.end = j.job.end;
            const std::uint64_t attempt = attempts_[order->id + "|" + j.line_id]++;
            const double p = config_.true_rates.lookup(recipe->id, j.line_id, b.prev_family);
            b.outcome = outcome_draw(config_.rng_seed, order->id, j.line_id, attempt) < p
                            ? BatchOutcome::Failed
                            : BatchOutcome::Success;
            j.status = JobStatus::Completed;
            j.outcome = b.outcome;
            events.push_back(Event{0, t, std::move(b)});
        }
        for (auto& [line, rt] : lines_) {
            if (!rt.next_failure || *rt.next_failure != t) continue;
            if (rt.state != LineState::Available) {
                sample_next_failure(line, t);
                continue;
            }
            fail_line(line, t);
            rt.next_failure.reset();
            rt.recovery_at = t + config_.repair_minutes;
            auto fe = failure_events(line, t, false);
            events.insert(events.end(), fe.begin(), fe.end());
        }
        for (auto& [line, rt] : lines_) {
            if (!rt.recovery_at || *rt.recovery_at != t) continue;
            rt.recovery_at.reset();
            rt.state = LineState::Available;
            events.push_back(Event{0, t, DeviceRecovered{line}});
            sample_next_failure(line, t);
        }
        for (const auto& sensor : config_.sensors) {
            auto it = next_sensor_.find(sensor.id);
            if (it == next_sensor_.end() || it->second != t) continue;
            const double value = sensor.mean + sensor.stddev * sensor_rng_.at(sensor.id).normal();
            events.push_back(Event{0, t, SensorReading{sensor.id, sensor.line_id, value, 1.0}});
            it->second += sensor.period;
        }
    }
    clock_ = until;
    return events;
}

std::vector<Event> Simulator::inject_failure(const std::string& line, Minutes at) {
    if (!lines_.count(line)) throw Error("unknown line '" + line + "'");
    if (at < clock_)
        throw Error("cannot inject a failure in the past (" + std::to_string(at) + " < " +
                    std::to_string(clock_) + ")");
    std::vector<Event> events = step(at);
    auto& rt = lines_.at(line);
    if (rt.state != LineState::Available) {
        events.push_back(Event{0, at, DeviceFailure{line, 1.0, true, true}});
        return events;
    }
    fail_line(line, at);
    rt.next_failure.reset();
    rt.recovery_at = at + config_.repair_minutes;
    auto fe = failure_events(line, at, true);
    events.insert(events.end(), fe.begin(), fe.end());
    return events;
}

Event Simulator::commit_schedule(const Schedule& schedule, const std::string& proposal_id) {
    const PlantState plant = plant_state();
    std::vector<Violation> vs;
    Schedule fresh = schedule;
    for (auto& [line, jobs] : fresh.lines) {
        std::vector<Job> kept;
        for (const auto& job : jobs) {
            bool retained = false;
            for (const auto& sj : jobs_) {
                if (sj.job.order_id != job.order_id) continue;
                if (sj.status == JobStatus::Completed) {
                    vs.push_back({"order already completed", job.order_id, line, "completed orders must be absent"});
                    retained = true;
                } else if (in_flight(sj)) {
                    if (sj.line_id != line || !(sj.job == job))
                        vs.push_back({"in-flight job altered", job.order_id, line,
                                      "running on " + sj.line_id + " until " + std::to_string(sj.job.end)});
                    retained = true;
                }
            }
            if (!retained) kept.push_back(job);
        }
        jobs = std::move(kept);
    }
    for (auto it = fresh.lines.begin(); it != fresh.lines.end();)
        it = it->second.empty() ? fresh.lines.erase(it) : std::next(it);
    auto structural = validate_schedule(fresh, plant, catalog_);
    vs.insert(vs.end(), structural.begin(), structural.end());
    if (!vs.empty()) throw ValidationError("schedule rejected", std::move(vs));

    std::erase_if(jobs_, [&](const SimJob& j) {
        return j.status == JobStatus::Stranded || (j.status == JobStatus::Pending && !in_flight(j));
    });
    for (const auto& [line, jobs] : fresh.lines)
        for (const auto& job : jobs) jobs_.push_back(SimJob{line, job, JobStatus::Pending, std::nullopt});
    std::stable_sort(jobs_.begin(), jobs_.end(), [](const SimJob& a, const SimJob& b) {
        return std::tie(a.line_id, a.job.changeover_start) < std::tie(b.line_id, b.job.changeover_start);
    });
    return Event{0, clock_, flatten_schedule(fresh, plant, catalog_, proposal_id)};
}

void Simulator::apply_external(const Event& event) {
    const Minutes at = std::max(event.ts, clock_);
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, DeviceFailure>) {
                auto it = lines_.find(p.line_id);
                if (p.duplicate || it == lines_.end() || it->second.state != LineState::Available) return;
                fail_line(p.line_id, at);
            } else if constexpr (std::is_same_v<T, DeviceRecovered>) {
                auto it = lines_.find(p.line_id);
                if (it == lines_.end() || it->second.state == LineState::Available) return;
                it->second.state = LineState::Available;
                it->second.recovery_at.reset();
                if (!it->second.next_failure) sample_next_failure(p.line_id, at);
            } else if constexpr (std::is_same_v<T, MaintenanceStart>) {
                auto it = lines_.find(p.line_id);
                if (it == lines_.end()) return;
                it->second.state = LineState::Maintenance;
                strand_from(p.line_id, at);
            } else if constexpr (std::is_same_v<T, MaintenanceEnd>) {
                auto it = lines_.find(p.line_id);
                if (it == lines_.end() || it->second.state != LineState::Maintenance) return;
                it->second.state = LineState::Available;
            } else if constexpr (std::is_same_v<T, OrderCreated>) {
                if (catalog_.orders.count(p.order.id) || !catalog_.recipe(p.order.recipe_id)) return;
                catalog_.orders[p.order.id] = p.order;
            }
        },
        event.payload);
}

LineState Simulator::line_state(const std::string& line) const {
    auto it = lines_.find(line);
    if (it == lines_.end()) throw Error("unknown line '" + line + "'");
    return it->second.state;
}

PlantState Simulator::plant_state() const {
    PlantState p;
    p.shift_start = config_.shift_start;
    p.shift_length = config_.shift_length;
    p.clock = clock_;
    std::set<std::string> busy;
    for (const auto& [line, rt] : lines_) {
        LineStatus ls{line, rt.state, clock_, last_family(line), ""};
        for (const auto& j : jobs_)
            if (j.line_id == line && in_flight(j)) {
                ls.ready_at = j.job.end;
                ls.in_flight = j.job.order_id;
                busy.insert(j.job.order_id);
            }
        p.lines.push_back(std::move(ls));
    }
    std::set<std::string> done;
    for (const auto& j : jobs_)
        if (j.status == JobStatus::Completed) done.insert(j.job.order_id);
    for (const auto& [id, _] : catalog_.orders)
        if (!done.count(id) && !busy.count(id)) p.open_orders.push_back(id);
    return p;
}

std::map<std::string, OrderFate> Simulator::order_fates() const {
    std::map<std::string, OrderFate> out;
    for (const auto& [id, _] : catalog_.orders) out[id] = OrderFate::Pending;
    for (const auto& j : jobs_) {
        switch (j.status) {
            case JobStatus::Completed:
                out[j.job.order_id] = j.outcome == BatchOutcome::Failed ? OrderFate::CompletedFailed
                                                                        : OrderFate::CompletedSuccess;
                break;
            case JobStatus::Stranded: out[j.job.order_id] = OrderFate::Stranded; break;
            case JobStatus::Pending: break;
        }
    }
    return out;
}

Schedule Simulator::committed_schedule() const {
    Schedule s;
    s.shift_start = config_.shift_start;
    s.shift_length = config_.shift_length;
    for (const auto& j : jobs_) s.lines[j.line_id].push_back(j.job);
    return s;
}

}  // namespace resched::sim
