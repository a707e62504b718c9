#include "resched/situation.hpp"

#include <cmath>
#include <cstdio>

#include "resched/digest.hpp"

namespace resched::situation {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kKindNames[] = {"LineUnavailable", "LineRecovered", "HighRiskChangeover",
                                      "SensorAnomaly", "ScheduleInfeasible"};

bool valid_trust(double t) { return std::isfinite(t) && t >= 0.0 && t <= 1.0; }

class Observer {
  public:
    Observer(const SituationModel& model, SituationState& state, const Event& event,
             const analytics::AnalyticsState& analytics)
        : model_(model), state_(state), event_(event), analytics_(analytics) {}

    ObserveResult run() {
        std::visit([this](const auto& p) { on(p); }, event_.payload);
        evaluate_plan();
        return std::move(result_);
    }

  private:
    void emit(SituationKind kind, const std::string& subject, std::vector<Observation> window,
              bool requires_reconfiguration) {
        const double reliability = check_reliability(model_, window);
        if (reliability < model_.emit_threshold) {
            ++state_.suppressed;
            return;
        }
        if (state_.active.count({kind, subject})) return;
        Situation s;
        char id[32];
        std::snprintf(id, sizeof id, "sit-%06llu", static_cast<unsigned long long>(state_.next_id++));
        s.id = id;
        s.kind = kind;
        s.subject = subject;
        s.detected_at = event_.ts;
        s.detected_seq = event_.seq;
        for (const auto& o : window) s.evidence.push_back(o.seq);
        s.reliability = reliability;
        s.requires_reconfiguration = requires_reconfiguration;
        state_.active[{kind, subject}] = state_.history.size();
        state_.history.push_back(s);
        result_.emitted.push_back(std::move(s));
    }

    void clear(SituationKind kind, const std::string& subject) {
        auto it = state_.active.find({kind, subject});
        if (it == state_.active.end()) return;
        state_.history[it->second].active = false;
        result_.cleared.push_back(state_.history[it->second].id);
        state_.active.erase(it);
    }

    Observation self(double trust = 1.0) const { return Observation{event_.seq, true, trust}; }

    void resolve_failure(const std::string& line) {
        auto window = std::move(state_.pending_failures[line]);
        state_.pending_failures.erase(line);
        if (check_reliability(model_, window) < model_.emit_threshold) {
            ++state_.suppressed;
            return;
        }
        state_.believed[line] = LineState::Failed;
        clear(SituationKind::LineRecovered, line);
        emit(SituationKind::LineUnavailable, line, std::move(window), true);
    }

    void on(const SensorReading& r) {
        if (r.sensor_id.empty() || !std::isfinite(r.value) || !valid_trust(r.source_trust)) {
            ++state_.skipped;
            return;
        }
        if (!r.line_id.empty()) {
            auto it = state_.pending_failures.find(r.line_id);
            if (it == state_.pending_failures.end()) return;
            it->second.push_back(Observation{event_.seq, r.value < 0.5, r.source_trust});
            if (it->second.size() >= static_cast<std::size_t>(model_.debounce_k))
                resolve_failure(r.line_id);
            return;
        }
        auto& window = state_.sensor_windows[r.sensor_id];
        if (window.size() == model_.anomaly_window) {
            std::vector<double> values(window.begin(), window.end());
            double sum = 0.0;
            for (double v : values) sum += v;
            const double mean = sum / static_cast<double>(values.size());
            const double sd = population_stddev(values);
            if (sd > 0.0) {
                const double z = (r.value - mean) / sd;
                if (std::fabs(z) > model_.anomaly_z)
                    emit(SituationKind::SensorAnomaly, r.sensor_id, {self(r.source_trust)}, false);
                else
                    clear(SituationKind::SensorAnomaly, r.sensor_id);
            }
        }
        window.push_back(r.value);
        while (window.size() > model_.anomaly_window) window.pop_front();
    }

    void on(const DeviceFailure& f) {
        if (f.line_id.empty() || !valid_trust(f.source_trust)) {
            ++state_.skipped;
            return;
        }
        if (f.duplicate || state_.pending_failures.count(f.line_id)) return;
        if (state_.believed.count(f.line_id) && state_.believed[f.line_id] == LineState::Failed) return;
        state_.pending_failures[f.line_id] = {self(f.source_trust)};
        if (model_.debounce_k <= 1) resolve_failure(f.line_id);
    }

    void on(const DeviceRecovered& r) {
        if (r.line_id.empty()) {
            ++state_.skipped;
            return;
        }
        state_.pending_failures.erase(r.line_id);
        auto it = state_.believed.find(r.line_id);
        const bool was_down = it != state_.believed.end() && it->second == LineState::Failed;
        state_.believed[r.line_id] = LineState::Available;
        if (was_down) {
            clear(SituationKind::LineUnavailable, r.line_id);
            emit(SituationKind::LineRecovered, r.line_id, {self()}, true);
        }
    }

    void on(const MaintenanceStart& m) {
        if (m.line_id.empty()) {
            ++state_.skipped;
            return;
        }
        state_.believed[m.line_id] = LineState::Maintenance;
    }

    void on(const MaintenanceEnd& m) {
        if (m.line_id.empty()) {
            ++state_.skipped;
            return;
        }
        state_.believed[m.line_id] = LineState::Available;
    }

    void on(const OrderCreated& o) {
        if (o.order.id.empty()) {
            ++state_.skipped;
            return;
        }
        state_.order_recipe[o.order.id] = o.order.recipe_id;
    }

    void on(const BatchCompleted& b) { state_.completed.insert(b.order_id); }

    void on(const ScheduleExecuted& s) { state_.plan = s.jobs; }

    LineState believed(const std::string& line) const {
        auto it = state_.believed.find(line);
        return it == state_.believed.end() ? LineState::Available : it->second;
    }

    void evaluate_plan() {
        std::set<std::string> risky;
        std::set<std::string> infeasible;
        for (const auto& job : state_.plan) {
            if (state_.completed.count(job.order_id)) continue;
            const LineState line_state = believed(job.line_id);
            if (line_state == LineState::Available) {
                if (job.processing_start < event_.ts) continue;
                const auto est =
                    analytics::failure_rate(analytics_, job.recipe_id, job.line_id, job.prev_family);
                if (est.rate > model_.risk_threshold) risky.insert(job.order_id + "@" + job.line_id);
            } else if (job.end > event_.ts &&
                       !state_.active.count({SituationKind::LineUnavailable, job.line_id}) &&
                       !state_.pending_failures.count(job.line_id)) {
                infeasible.insert(job.line_id);
            }
        }
        sync(SituationKind::HighRiskChangeover, risky);
        sync(SituationKind::ScheduleInfeasible, infeasible);
    }

    void sync(SituationKind kind, const std::set<std::string>& subjects) {
        std::vector<std::string> stale;
        for (const auto& [key, _] : state_.active)
            if (key.first == kind && !subjects.count(key.second)) stale.push_back(key.second);
        for (const auto& s : stale) clear(kind, s);
        for (const auto& s : subjects) emit(kind, s, {self()}, true);
    }

    const SituationModel& model_;
    SituationState& state_;
    const Event& event_;
    const analytics::AnalyticsState& analytics_;
    ObserveResult result_;
};

}  // namespace

const char* to_string(SituationKind k) { return kKindNames[static_cast<int>(k)]; }

SituationKind situation_kind_from_string(const std::string& s) {
    for (int i = 0; i < 5; ++i)
        if (s == kKindNames[i]) return static_cast<SituationKind>(i);
    throw Error("unknown situation kind '" + s + "'");
}

void SituationModel::validate() const {
    if (debounce_k < 1) throw Error("situation model: debounce_k must be >= 1");
    if (!(emit_threshold >= 0.0 && emit_threshold <= 1.0))
        throw Error("situation model: emit_threshold must be in [0,1]");
    if (!(anomaly_z > 0.0)) throw Error("situation model: anomaly_z must be > 0");
    if (anomaly_window < 2) throw Error("situation model: anomaly_window must be >= 2");
    if (!(risk_threshold > 0.0 && risk_threshold < 1.0))
        throw Error("situation model: risk_threshold must be in (0,1)");
}

double check_reliability(const SituationModel&, std::span<const Observation> window) {
    if (window.empty()) return 0.0;
    std::size_t consistent = 0;
    double trust = 0.0;
    for (const auto& o : window) {
        if (o.consistent) ++consistent;
        trust += o.trust;
    }
    const double n = static_cast<double>(window.size());
    return (static_cast<double>(consistent) / n) * (trust / n);
}

ObserveResult observe(const SituationModel& model, SituationState& state, const Event& event,
                      const analytics::AnalyticsState& analytics) {
    return Observer(model, state, event, analytics).run();
}

std::vector<Situation> active_situations(const SituationState& state) {
    std::vector<Situation> out;
    for (const auto& s : state.history)
        if (s.active) out.push_back(s);
    std::stable_sort(out.begin(), out.end(),
                     [](const Situation& a, const Situation& b) { return a.detected_at < b.detected_at; });
    return out;
}

bool acknowledge(SituationState& state, const std::string& id) {
    for (auto it = state.active.begin(); it != state.active.end(); ++it) {
        Situation& s = state.history[it->second];
        if (s.id == id && s.kind == SituationKind::LineRecovered) {
            s.active = false;
            state.active.erase(it);
            return true;
        }
    }
    return false;
}

ordered_json to_json(const Situation& s) {
    ordered_json j;
    j["id"] = s.id;
    j["kind"] = to_string(s.kind);
    j["subject"] = s.subject;
    j["detected_at"] = s.detected_at;
    j["detected_seq"] = s.detected_seq;
    j["evidence"] = s.evidence;
    j["reliability"] = s.reliability;
    j["requires_reconfiguration"] = s.requires_reconfiguration;
    j["active"] = s.active;
    return j;
}

Situation situation_from_json(const json& j) {
    Situation s;
    s.id = j.at("id").get<std::string>();
    s.kind = situation_kind_from_string(j.at("kind").get<std::string>());
    s.subject = j.at("subject").get<std::string>();
    s.detected_at = j.at("detected_at").get<Minutes>();
    s.detected_seq = j.at("detected_seq").get<std::uint64_t>();
    s.evidence = j.at("evidence").get<std::vector<std::uint64_t>>();
    s.reliability = j.at("reliability").get<double>();
    s.requires_reconfiguration = j.at("requires_reconfiguration").get<bool>();
    s.active = j.value("active", true);
    return s;
}

ordered_json to_json(const SituationModel& m) {
    ordered_json j;
    j["debounce_k"] = m.debounce_k;
    j["emit_threshold"] = m.emit_threshold;
    j["anomaly_z"] = m.anomaly_z;
    j["anomaly_window"] = m.anomaly_window;
    j["risk_threshold"] = m.risk_threshold;
    return j;
}

SituationModel model_from_json(const json& j) {
    SituationModel m;
    m.debounce_k = j.value("debounce_k", m.debounce_k);
    m.emit_threshold = j.value("emit_threshold", m.emit_threshold);
    m.anomaly_z = j.value("anomaly_z", m.anomaly_z);
    m.anomaly_window = j.value("anomaly_window", m.anomaly_window);
    m.risk_threshold = j.value("risk_threshold", m.risk_threshold);
    m.validate();
    return m;
}

std::string state_hash(const SituationState& state) {
    ordered_json j;
    ordered_json history = ordered_json::array();
    for (const auto& s : state.history) history.push_back(to_json(s));
    j["history"] = std::move(history);
    j["skipped"] = state.skipped;
    j["suppressed"] = state.suppressed;
    return sha256_hex(j.dump());
}

}  // namespace resched::situation
