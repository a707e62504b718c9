#include "resched/service.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "resched/codec.hpp"

namespace fs = std::filesystem;

namespace resched::svc {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kMaxAutoExecutions = 4;

int open_append(const fs::path& path) {
    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw Error("cannot open " + path.string());
    return fd;
}

void write_line(int fd, const std::string& line, bool sync) {
    const std::string buf = line + "\n";
    std::size_t off = 0;
    while (off < buf.size()) {
        const ssize_t n = ::write(fd, buf.data() + off, buf.size() - off);
        if (n < 0) throw Error("write failed");
        off += static_cast<std::size_t>(n);
    }
    if (sync) ::fdatasync(fd);
}

/// Newline-terminated JSON records of an NDJSON file. A torn last record is cut off the file.
std::vector<json> read_ndjson(const fs::path& path) {
    std::vector<json> out;
    std::ifstream in(path, std::ios::binary);
    std::string line;
    std::uintmax_t good = 0;
    while (std::getline(in, line)) {
        if (in.eof()) break;  // no newline: the write was interrupted
        if (!line.empty()) out.push_back(json::parse(line));
        good += line.size() + 1;
    }
    in.close();
    if (good < fs::file_size(path)) {
        std::fprintf(stderr, "warning: %s: discarding torn trailing record\n", path.c_str());
        fs::resize_file(path, good);
    }
    return out;
}

ordered_json move_to_json(const Move& m) {
    ordered_json j{{"order_id", m.order_id}};
    if (m.line) j["line"] = *m.line;
    if (m.position) j["position"] = *m.position;
    if (m.pin) j["pin"] = *m.pin;
    return j;
}

bool is_open(ProposalStatus s) { return s == ProposalStatus::Pending || s == ProposalStatus::Adjusted; }

bool automatic(const std::string& trigger) { return trigger != "manual"; }

}  // namespace

const char* to_string(ProposalStatus s) {
    switch (s) {
        case ProposalStatus::Pending: return "Pending";
        case ProposalStatus::Adjusted: return "Adjusted";
        case ProposalStatus::Executed: return "Executed";
        case ProposalStatus::Superseded: return "Superseded";
        case ProposalStatus::Rejected: return "Rejected";
    }
    return "?";
}

Move move_from_json(const json& j) {
    if (!j.is_object() || !j.contains("order_id") || !j["order_id"].is_string())
        throw Error("move needs a string order_id");
    Move m;
    m.order_id = j["order_id"].get<std::string>();
    if (j.contains("line")) m.line = j["line"].get<std::string>();
    if (j.contains("position")) {
        if (!j["position"].is_number_unsigned()) throw Error("move position must be a non-negative integer");
        m.position = j["position"].get<std::size_t>();
    }
    if (j.contains("pin")) m.pin = j["pin"].get<bool>();
    if (!m.line && !m.position && !m.pin) throw Error("move for '" + m.order_id + "' changes nothing");
    return m;
}

Config Config::from_json(const json& j, const std::string& base_dir) {
    Config c;
    auto path = [&](const std::string& p) {
        if (p.empty() || fs::path(p).is_absolute()) return p;
        const fs::path rel = fs::path(base_dir) / p;
        return fs::exists(rel) || p.find('/') != std::string::npos ? rel.string() : p;
    };
    c.scenario = path(j.at("scenario").get<std::string>());
    if (j.contains("tokens"))
        for (const auto& [token, principal] : j["tokens"].items()) c.tokens[token] = principal.get<std::string>();
    if (j.contains("situation_model")) c.situation_model = situation::model_from_json(j["situation_model"]);
    if (j.contains("ga")) c.ga = opt::params_from_json(j["ga"]);
    if (j.contains("weights")) c.weights = opt::weights_from_json(j["weights"]);
    c.auto_execute = j.value("auto_execute", c.auto_execute);
    c.predictive_k = j.value("predictive_k", c.predictive_k);
    c.port = j.value("port", c.port);
    c.bind = j.value("bind", c.bind);
    if (j.contains("data_dir")) c.data_dir = path(j["data_dir"].get<std::string>());
    if (j.contains("ui_dir")) c.ui_dir = path(j["ui_dir"].get<std::string>());
    c.logic = j.value("logic", c.logic);
    c.execute_baseline_on_start = j.value("execute_baseline_on_start", c.execute_baseline_on_start);
    c.sync = j.value("sync", c.sync);
    if (c.predictive_k < 1) throw Error("config: predictive_k must be >= 1");
    analytics::LogicVersion::parse(c.logic);
    return c;
}

Config Config::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error("config " + path + ": " + e.what());
    }
    return from_json(j, fs::path(path).parent_path().string());
}

ordered_json to_json(const Proposal& p) {
    ordered_json j;
    j["id"] = p.id;
    j["trigger"] = p.trigger;
    j["status"] = to_string(p.status);
    j["created_at"] = p.created_at;
    j["scalar"] = p.scalar;
    j["fitness"] = opt::to_json(p.fitness);
    j["original_fitness"] = opt::to_json(p.original_fitness);
    j["baseline_fitness"] = opt::to_json(p.baseline_fitness);
    j["schedule"] = resched::to_json(p.schedule);
    j["adjustments"] = p.adjustments;
    j["pinned"] = p.pinned;
    j["executed_seq"] = p.executed_seq ? ordered_json(*p.executed_seq) : ordered_json(nullptr);
    return j;
}

ordered_json to_json(const AuditRecord& a) {
    return ordered_json{{"n", a.n},           {"ts", a.ts},           {"principal", a.principal},
                        {"action", a.action}, {"request", a.request}, {"outcome", a.outcome}};
}

Service::Service(Config config) : config_(std::move(config)) {
    std::vector<json> journal;
    fs::path dir;
    if (!config_.data_dir.empty()) {
        dir = config_.data_dir;
        fs::create_directories(dir);
        if (fs::exists(dir / "control.ndjson")) journal = read_ndjson(dir / "control.ndjson");
    }
    log_ = std::make_unique<EventLog>();
    recover(journal);
    if (dir.empty()) return;

    auto opened = EventLog::open((dir / "events.ndjson").string(), LogOptions{config_.sync});
    for (const auto& w : opened.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    const auto stored = opened.log->read_from(1);
    const auto regenerated = log_->read_from(1);
    if (stored.size() > regenerated.size())
        throw Error("event log diverges from command journal at seq " + std::to_string(regenerated.size() + 1));
    for (std::size_t i = 0; i < stored.size(); ++i)
        if (!(stored[i] == regenerated[i]))
            throw Error("event log diverges from command journal at seq " + std::to_string(i + 1));
    for (std::size_t i = stored.size(); i < regenerated.size(); ++i) {
        Event e = regenerated[i];
        e.seq = 0;
        opened.log->append(e);
    }
    log_ = std::move(opened.log);

    journal_fd_ = open_append(dir / "control.ndjson");
    if (fs::exists(dir / "audit.ndjson"))
        for (const auto& j : read_ndjson(dir / "audit.ndjson"))
            audit_.push_back(AuditRecord{j.at("n").get<std::uint64_t>(), j.at("ts").get<Minutes>(),
                                         j.at("principal").get<std::string>(), j.at("action").get<std::string>(),
                                         j.at("request"), j.at("outcome").get<std::string>()});
    audit_fd_ = open_append(dir / "audit.ndjson");
}

Service::~Service() {
    close_streams();
    if (journal_fd_ >= 0) ::close(journal_fd_);
    if (audit_fd_ >= 0) ::close(audit_fd_);
}

void Service::recover(const std::vector<json>& journal) {
    replaying_ = true;
    start();
    for (const auto& entry : journal) {
        try {
            dispatch(entry);
        } catch (const Error&) {
            // Rejected when first run; rejected again.
        }
    }
    replaying_ = false;
}

void Service::start() {
    scenario_ = load_scenario(resolve_scenario_path(config_.scenario));
    fold_.analytics.logic = analytics::LogicVersion::parse(config_.logic);
    fold_.model = config_.situation_model;
    auto init = sim::Simulator::init(scenario_);
    sim_.emplace(std::move(init.sim));
    Outcome out;
    publish_all(std::move(init.events), out);
    baseline_plant_ = sim_->plant_state();
    baseline_ = baseline_schedule(baseline_plant_, sim_->catalog());
    if (config_.execute_baseline_on_start) publish(sim_->commit_schedule(baseline_, "baseline"), out);
    depth_ = 0;
    react(out);
}

void Service::journal(const ordered_json& entry) {
    if (replaying_ || journal_fd_ < 0) return;
    std::lock_guard lock(journal_mutex_);
    write_line(journal_fd_, entry.dump(), config_.sync);
}

ordered_json Service::dispatch(const json& entry) {
    const std::string cmd = entry.at("cmd").get<std::string>();
    depth_ = 0;
    if (cmd == "advance") return do_advance(entry.at("until").get<Minutes>());
    if (cmd == "ingest") {
        std::vector<Event> bodies;
        for (const auto& e : entry.at("events")) bodies.push_back(event_from_json(e));
        return do_ingest(bodies);
    }
    if (cmd == "inject") {
        std::optional<Minutes> at;
        if (entry.contains("at") && !entry["at"].is_null()) at = entry["at"].get<Minutes>();
        return do_inject(entry.at("line").get<std::string>(), at);
    }
    if (cmd == "optimize") return do_optimize(entry.at("request"));
    if (cmd == "adjust") {
        std::vector<Move> moves;
        for (const auto& m : entry.at("moves")) moves.push_back(move_from_json(m));
        return do_adjust(entry.at("id").get<std::string>(), moves);
    }
    if (cmd == "execute") return do_execute(entry.at("id").get<std::string>());
    if (cmd == "ack") return do_ack(entry.at("id").get<std::string>());
    throw Error("unknown journal command '" + cmd + "'");
}

ordered_json Service::ingest(const std::vector<Event>& bodies) {
    ordered_json events = ordered_json::array();
    for (const auto& e : bodies) events.push_back(event_to_json(e));
    ordered_json entry{{"cmd", "ingest"}, {"events", std::move(events)}};
    std::unique_lock lock(mutex_);
    journal(entry);
    return dispatch(entry);
}

ordered_json Service::advance(Minutes until) {
    ordered_json entry{{"cmd", "advance"}, {"until", until}};
    std::unique_lock lock(mutex_);
    journal(entry);
    return dispatch(entry);
}

ordered_json Service::inject_failure(const std::string& line, std::optional<Minutes> at) {
    ordered_json entry{{"cmd", "inject"}, {"line", line}, {"at", at ? ordered_json(*at) : ordered_json(nullptr)}};
    std::unique_lock lock(mutex_);
    journal(entry);
    return dispatch(entry);
}

ordered_json Service::optimize(const json& request) {
    ordered_json entry{{"cmd", "optimize"}, {"request", ordered_json::parse(request.dump())}};
    std::unique_lock lock(mutex_);
    journal(entry);
    return dispatch(entry);
}

ordered_json Service::adjust(const std::string& id, const std::vector<Move>& moves) {
    ordered_json ms = ordered_json::array();
    for (const auto& m : moves) ms.push_back(move_to_json(m));
    ordered_json entry{{"cmd", "adjust"}, {"id", id}, {"moves", std::move(ms)}};
    std::unique_lock lock(mutex_);
    journal(entry);
    return dispatch(entry);
}

ordered_json Service::execute(const std::string& id) {
    ordered_json entry{{"cmd", "execute"}, {"id", id}};
    std::unique_lock lock(mutex_);
    journal(entry);
    return dispatch(entry);
}

ordered_json Service::acknowledge(const std::string& id) {
    ordered_json entry{{"cmd", "ack"}, {"id", id}};
    std::unique_lock lock(mutex_);
    journal(entry);
    return dispatch(entry);
}

std::uint64_t Service::publish(Event body, Outcome& out) {
    body.seq = log_->append(body);
    const auto observed = fold_.apply(body);
    for (const auto& s : observed.emitted) {
        emit_frame("situation", situation::to_json(s));
        out.situations.push_back(s.id);
        if (s.requires_reconfiguration) pending_triggers_.push_back(s.id);
    }
    for (const auto& id : observed.cleared) emit_frame("situation_cleared", ordered_json{{"id", id}});
    out.seqs.push_back(body.seq);
    return body.seq;
}

void Service::publish_all(std::vector<Event> bodies, Outcome& out) {
    for (auto& b : bodies) publish(std::move(b), out);
}

void Service::react(Outcome& out) {
    while (!pending_triggers_.empty()) {
        const std::string id = pending_triggers_.front();
        pending_triggers_.erase(pending_triggers_.begin());
        const auto& history = fold_.situations.history;
        auto it = std::find_if(history.begin(), history.end(), [&](const auto& s) { return s.id == id; });
        if (it == history.end() || !it->active) continue;
        const situation::Situation s = *it;
        trigger(s, out);
    }
}

void Service::trigger(const situation::Situation& s, Outcome& out) {
    const PlantState plant = sim_->plant_state();
    const Catalog& catalog = sim_->catalog();
    const auto stranded = stranded_orders(plant, catalog);
    if (!stranded.empty()) {
        situation::Situation n;
        char id[32];
        std::snprintf(id, sizeof id, "inf-%06llu", static_cast<unsigned long long>(next_notice_++));
        n.id = id;
        n.kind = situation::SituationKind::ScheduleInfeasible;
        n.subject = s.subject;
        n.detected_at = sim_->clock();
        n.detected_seq = log_->head();
        n.reliability = 1.0;
        n.requires_reconfiguration = true;
        ordered_json frame = situation::to_json(n);
        frame["stranded_orders"] = stranded;
        frame["cause"] = s.id;
        notices_.push_back(std::move(n));
        out.situations.push_back(id);
        emit_frame("situation", std::move(frame));
        return;
    }

    Proposal p;
    p.plant = plant;
    p.rates = std::make_shared<const analytics::AnalyticsState>(fold_.analytics);
    p.weights = config_.weights;
    p.created_at = sim_->clock();
    bool cached = false;
    if (s.kind == situation::SituationKind::LineUnavailable) {
        auto it = contingencies_.find(s.subject);
        if (it != contingencies_.end() && it->second.feasible &&
            it->second.fingerprint == opt::plant_fingerprint(plant, fold_.analytics)) {
            const auto& r = *it->second.result;
            p.schedule = r.schedule;
            p.fitness = p.original_fitness = r.fitness;
            p.baseline_fitness = r.baseline_fitness;
            p.scalar = r.scalar;
            p.trigger = "predictive:" + s.subject;
            cached = true;
        }
    }
    if (!cached) {
        const auto r = opt::optimize_reactive(plant, catalog, analytics::rate_fn(fold_.analytics), config_.weights,
                                              config_.ga);
        p.schedule = r.schedule;
        p.fitness = p.original_fitness = r.fitness;
        p.baseline_fitness = r.baseline_fitness;
        p.scalar = r.scalar;
        p.trigger = s.id;
    }
    Proposal& added = add_proposal(std::move(p), out);
    if (config_.auto_execute && depth_ < kMaxAutoExecutions) {
        ++depth_;
        commit(added, out);
    }
}

Proposal& Service::add_proposal(Proposal p, Outcome& out) {
    char id[32];
    std::snprintf(id, sizeof id, "prop-%06llu", static_cast<unsigned long long>(next_proposal_++));
    p.id = id;
    for (auto& other : proposals_)
        if (is_open(other.status) && automatic(other.trigger) == automatic(p.trigger)) {
            other.status = ProposalStatus::Superseded;
            emit_frame("proposal_update", ordered_json{{"id", other.id}, {"status", to_string(other.status)}});
        }
    out.proposals.push_back(p.id);
    proposals_.push_back(std::move(p));
    emit_frame("proposal", to_json(proposals_.back()));
    return proposals_.back();
}

void Service::commit(Proposal& p, Outcome& out) {
    Event e = sim_->commit_schedule(p.schedule, p.id);
    p.executed_seq = publish(std::move(e), out);
    p.status = ProposalStatus::Executed;
    emit_frame("proposal_update",
               ordered_json{{"id", p.id}, {"status", to_string(p.status)}, {"executed_seq", *p.executed_seq}});
    for (auto& other : proposals_)
        if (other.id != p.id && is_open(other.status)) {
            other.status = ProposalStatus::Superseded;
            emit_frame("proposal_update", ordered_json{{"id", other.id}, {"status", to_string(other.status)}});
        }
}

ordered_json Service::outcome_json(const Outcome& out) {
    return ordered_json{{"seqs", out.seqs}, {"situations", out.situations}, {"proposals", out.proposals}};
}

ordered_json Service::do_ingest(const std::vector<Event>& bodies) {
    Minutes last = log_->last_ts().value_or(std::numeric_limits<Minutes>::min());
    for (const auto& b : bodies) {
        if (b.ts < last)
            throw Error("timestamp regression: " + std::to_string(b.ts) + " < " + std::to_string(last));
        last = b.ts;
    }
    Outcome sim_events;
    Outcome out;
    for (Event b : bodies) {
        if (b.ts > sim_->clock()) publish_all(sim_->step(b.ts), sim_events);
        b.seq = 0;
        sim_->apply_external(b);
        publish(std::move(b), out);
    }
    out.situations.insert(out.situations.begin(), sim_events.situations.begin(), sim_events.situations.end());
    react(out);
    return outcome_json(out);
}

ordered_json Service::do_advance(Minutes until) {
    if (until < sim_->clock())
        throw Error("cannot advance to " + std::to_string(until) + ": clock is at " + std::to_string(sim_->clock()));
    Outcome out;
    publish_all(sim_->step(until), out);
    react(out);
    ordered_json j = outcome_json(out);
    j["clock"] = sim_->clock();
    return j;
}

ordered_json Service::do_inject(const std::string& line, std::optional<Minutes> at) {
    if (!sim_->plant_state().line(line)) throw NotFound("unknown line '" + line + "'");
    auto events = sim_->inject_failure(line, at.value_or(sim_->clock()));
    bool duplicate = false;
    for (const auto& e : events)
        if (const auto* f = std::get_if<DeviceFailure>(&e.payload); f && f->line_id == line) duplicate = f->duplicate;
    Outcome out;
    publish_all(std::move(events), out);
    react(out);
    ordered_json j = outcome_json(out);
    j["duplicate"] = duplicate;
    j["clock"] = sim_->clock();
    return j;
}

opt::GaParams Service::ga_params(const json& request) const {
    return request.contains("ga") ? opt::params_from_json(request["ga"], config_.ga) : config_.ga;
}

ordered_json Service::do_optimize(const json& request) {
    if (!request.is_object()) throw Error("optimize request must be an object");
    const std::string mode = request.value("mode", std::string("reactive"));
    const opt::ObjectiveWeights weights =
        request.contains("weights") ? opt::weights_from_json(request["weights"], config_.weights) : config_.weights;
    const opt::GaParams ga = ga_params(request);
    const PlantState plant = sim_->plant_state();

    if (mode == "predictive") {
        const int k = request.value("k", config_.predictive_k);
        contingencies_ = opt::optimize_predictive(plant, sim_->catalog(), fold_.analytics, weights, ga, k);
        ordered_json arr = ordered_json::array();
        for (const auto& [line, c] : contingencies_)
            arr.push_back({{"line", line},
                           {"hazard", c.hazard},
                           {"feasible", c.feasible},
                           {"stranded_orders", c.stranded},
                           {"scalar", c.result ? ordered_json(c.result->scalar) : ordered_json(nullptr)},
                           {"seed", c.seed},
                           {"fingerprint", c.fingerprint}});
        emit_frame("contingencies", ordered_json{{"lines", arr}});
        return ordered_json{{"mode", "predictive"}, {"contingencies", std::move(arr)}};
    }
    if (mode != "reactive") throw Error("unknown optimize mode '" + mode + "'");

    const auto r = opt::optimize_reactive(plant, sim_->catalog(), analytics::rate_fn(fold_.analytics), weights, ga);
    Proposal p;
    p.plant = plant;
    p.rates = std::make_shared<const analytics::AnalyticsState>(fold_.analytics);
    p.weights = weights;
    p.created_at = sim_->clock();
    p.schedule = r.schedule;
    p.fitness = p.original_fitness = r.fitness;
    p.baseline_fitness = r.baseline_fitness;
    p.scalar = r.scalar;
    p.trigger = "manual";
    Outcome out;
    ordered_json j = to_json(add_proposal(std::move(p), out));
    j["generations_run"] = r.generations_run;
    return j;
}

Proposal& Service::find_proposal(const std::string& id) {
    for (auto& p : proposals_)
        if (p.id == id) return p;
    throw NotFound("unknown proposal '" + id + "'");
}

const Proposal& Service::find_proposal(const std::string& id) const {
    for (const auto& p : proposals_)
        if (p.id == id) return p;
    throw NotFound("unknown proposal '" + id + "'");
}

ordered_json Service::do_adjust(const std::string& id, const std::vector<Move>& moves) {
    Proposal& p = find_proposal(id);
    if (!is_open(p.status)) throw Conflict(std::string("proposal is ") + to_string(p.status));
    const Catalog& catalog = sim_->catalog();

    std::map<std::string, std::vector<std::string>> seq;
    for (const auto& [line, jobs] : p.schedule.lines)
        for (const auto& job : jobs) seq[line].push_back(job.order_id);
    std::set<std::string> pinned = p.pinned;
    std::vector<Violation> vs;

    auto locate = [&](const std::string& order) -> std::optional<std::pair<std::string, std::size_t>> {
        for (const auto& [line, orders] : seq)
            for (std::size_t i = 0; i < orders.size(); ++i)
                if (orders[i] == order) return std::pair{line, i};
        return std::nullopt;
    };

    for (const auto& m : moves) {
        const auto where = locate(m.order_id);
        if (!where) {
            bool running = false;
            for (const auto& l : p.plant.lines) running = running || l.in_flight == m.order_id;
            vs.push_back({running ? "in-flight job" : "unknown order", m.order_id, "",
                          running ? "running jobs cannot be moved" : "order is not part of this proposal"});
            continue;
        }
        if (m.pin) {
            if (*m.pin)
                pinned.insert(m.order_id);
            else
                pinned.erase(m.order_id);
        }
        if (!m.line && !m.position) continue;
        if (pinned.count(m.order_id) && !(m.pin && *m.pin)) {
            vs.push_back({"pinned order", m.order_id, where->first, "unpin before moving"});
            continue;
        }
        const std::string target = m.line.value_or(where->first);
        const LineStatus* status = p.plant.line(target);
        const Recipe* recipe = catalog.recipe_of_order(m.order_id);
        if (!status || status->state != LineState::Available) {
            vs.push_back({"line not available", m.order_id, target, "target line is not Available"});
            continue;
        }
        if (!recipe || !recipe->duration_on(target)) {
            vs.push_back({"incompatible line", m.order_id, target, "recipe cannot run on this line"});
            continue;
        }
        auto& from = seq[where->first];
        from.erase(from.begin() + static_cast<std::ptrdiff_t>(where->second));
        auto& to = seq[target];
        const std::size_t pos = m.position.value_or(to.size());
        if (pos > to.size()) {
            from.insert(from.begin() + static_cast<std::ptrdiff_t>(where->second), m.order_id);
            vs.push_back({"position out of range", m.order_id, target,
                          "line has " + std::to_string(to.size()) + " other jobs"});
            continue;
        }
        to.insert(to.begin() + static_cast<std::ptrdiff_t>(pos), m.order_id);
    }
    if (!vs.empty()) throw ValidationError("adjustment rejected", std::move(vs));

    opt::Chromosome c;
    for (const auto& [line, orders] : seq)
        for (const auto& o : orders) {
            c.perm.push_back(o);
            c.assign[o] = line;
        }
    Schedule adjusted = opt::decode(c, p.plant, catalog);
    if (auto errors = validate_schedule(adjusted, p.plant, catalog); !errors.empty())
        throw ValidationError("adjustment rejected", std::move(errors));

    const MetricsContext ctx{&catalog, &p.plant, analytics::rate_fn(*p.rates), 1.0};
    const opt::FitnessVector before = p.fitness;
    p.schedule = std::move(adjusted);
    p.fitness = opt::FitnessVector::from(compute_metrics(p.schedule, ctx));
    p.scalar = opt::scalar_fitness(p.fitness, p.weights, p.baseline_fitness);
    p.pinned = std::move(pinned);
    p.status = ProposalStatus::Adjusted;
    ordered_json applied = ordered_json::array();
    for (const auto& m : moves) applied.push_back(move_to_json(m));
    p.adjustments.push_back(std::move(applied));
    emit_frame("proposal_update", ordered_json{{"id", p.id}, {"status", to_string(p.status)}, {"scalar", p.scalar}});

    ordered_json j;
    j["proposal"] = to_json(p);
    j["fitness"] = opt::to_json(p.fitness);
    j["previous_fitness"] = opt::to_json(before);
    j["original_fitness"] = opt::to_json(p.original_fitness);
    j["delta"] = {{"total_usage", p.fitness.total_usage - p.original_fitness.total_usage},
                  {"utilization_stddev", p.fitness.utilization_stddev - p.original_fitness.utilization_stddev},
                  {"expected_failure_cost", p.fitness.expected_failure_cost - p.original_fitness.expected_failure_cost},
                  {"total_tardiness", p.fitness.total_tardiness - p.original_fitness.total_tardiness}};
    return j;
}

ordered_json Service::do_execute(const std::string& id) {
    Proposal& p = find_proposal(id);
    if (p.status == ProposalStatus::Executed) throw Conflict("already executed");
    if (!is_open(p.status)) throw Conflict(std::string("proposal is ") + to_string(p.status));
    Outcome out;
    try {
        commit(p, out);
    } catch (const ValidationError& e) {
        throw Conflict("stale proposal", ordered_json{{"violations", resched::to_json(e.violations())},
                                                      {"suggestion", "POST /api/optimize"}});
    }
    react(out);
    ordered_json j = outcome_json(out);
    j["id"] = p.id;
    j["status"] = to_string(p.status);
    j["executed_seq"] = *p.executed_seq;
    return j;
}

ordered_json Service::do_ack(const std::string& id) {
    bool known = std::any_of(fold_.situations.history.begin(), fold_.situations.history.end(),
                             [&](const auto& s) { return s.id == id; }) ||
                 std::any_of(notices_.begin(), notices_.end(), [&](const auto& s) { return s.id == id; });
    if (!known) throw NotFound("unknown situation '" + id + "'");
    acked_.insert(id);
    emit_frame("situation_acknowledged", ordered_json{{"id", id}});
    return ordered_json{{"id", id}, {"acknowledged", true}};
}

void Service::emit_frame(const std::string& type, ordered_json data) {
    {
        std::lock_guard lock(frame_mutex_);
        frames_.push_back(Frame{frames_.size() + 1, type, std::move(data)});
    }
    frame_cv_.notify_all();
}

std::vector<Frame> Service::frames_after(std::uint64_t after, int timeout_ms) const {
    std::unique_lock lock(frame_mutex_);
    frame_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                       [&] { return closed_ || frames_.size() > after; });
    if (after >= frames_.size()) return {};
    return {frames_.begin() + static_cast<std::ptrdiff_t>(after), frames_.end()};
}

void Service::close_streams() {
    {
        std::lock_guard lock(frame_mutex_);
        closed_ = true;
    }
    frame_cv_.notify_all();
}

bool Service::streams_closed() const {
    std::lock_guard lock(frame_mutex_);
    return closed_;
}

std::optional<std::string> Service::authenticate(const std::string& token) const {
    auto it = config_.tokens.find(token);
    if (it == config_.tokens.end()) return std::nullopt;
    return it->second;
}

void Service::audit(const std::string& principal, const std::string& action, ordered_json request,
                    const std::string& outcome) {
    const Minutes ts = clock();
    std::lock_guard lock(audit_mutex_);
    AuditRecord r{audit_.size() + 1, ts, principal, action, std::move(request), outcome};
    if (audit_fd_ >= 0) write_line(audit_fd_, to_json(r).dump(), config_.sync);
    audit_.push_back(std::move(r));
}

std::vector<AuditRecord> Service::audit_records() const {
    std::lock_guard lock(audit_mutex_);
    return audit_;
}

ordered_json Service::current_schedule() const {
    std::shared_lock lock(mutex_);
    ordered_json lines = ordered_json::object();
    for (const auto& l : sim_->plant_state().lines) lines[l.id] = ordered_json::array();
    for (const auto& j : sim_->jobs()) {
        const char* status = j.status == sim::JobStatus::Completed ? "completed"
                             : j.status == sim::JobStatus::Stranded ? "stranded"
                             : j.job.processing_start < sim_->clock() && sim_->clock() < j.job.end
                                 ? "running"
                                 : "pending";
        ordered_json job{{"order_id", j.job.order_id},
                         {"changeover_start", j.job.changeover_start},
                         {"processing_start", j.job.processing_start},
                         {"end", j.job.end},
                         {"status", status}};
        if (j.outcome) job["outcome"] = *j.outcome == BatchOutcome::Failed ? "failed" : "success";
        lines[j.line_id].push_back(std::move(job));
    }
    std::string executed = config_.execute_baseline_on_start ? "baseline" : "";
    for (const auto& p : proposals_)
        if (p.status == ProposalStatus::Executed) executed = p.id;
    ordered_json states = ordered_json::object();
    for (const auto& l : sim_->plant_state().lines) states[l.id] = resched::to_string(l.state);
    return ordered_json{{"clock", sim_->clock()},
                        {"shift_start", scenario_.shift_start},
                        {"shift_length", scenario_.shift_length},
                        {"executed_proposal", executed},
                        {"line_states", std::move(states)},
                        {"lines", std::move(lines)}};
}

ordered_json Service::proposals() const {
    std::shared_lock lock(mutex_);
    ordered_json arr = ordered_json::array();
    for (const auto& p : proposals_) arr.push_back(to_json(p));
    return arr;
}

ordered_json Service::proposal(const std::string& id) const {
    std::shared_lock lock(mutex_);
    return to_json(find_proposal(id));
}

ordered_json Service::situations(std::uint64_t since) const {
    std::shared_lock lock(mutex_);
    std::vector<situation::Situation> all;
    for (const auto& s : fold_.situations.history)
        if (s.detected_seq > since) all.push_back(s);
    for (const auto& s : notices_)
        if (s.detected_seq > since) all.push_back(s);
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.detected_seq < b.detected_seq; });
    ordered_json arr = ordered_json::array();
    for (const auto& s : all) {
        ordered_json j = situation::to_json(s);
        j["acknowledged"] = acked_.count(s.id) > 0;
        std::string linked;
        for (const auto& p : proposals_)
            if (p.trigger == s.id) linked = p.id;
        j["proposal_id"] = linked.empty() ? ordered_json(nullptr) : ordered_json(linked);
        arr.push_back(std::move(j));
    }
    return arr;
}

ordered_json Service::failure_rates(const std::optional<std::string>& recipe, const std::optional<std::string>& line,
                                    const std::optional<std::string>& prev_family) const {
    std::shared_lock lock(mutex_);
    if (recipe || line) {
        if (!recipe || !line) throw Error("failure-rates lookup needs both recipe and line");
        const auto e = analytics::failure_rate(fold_.analytics, *recipe, *line, prev_family.value_or(""));
        return ordered_json{{"recipe", e.key.recipe},   {"line", e.key.line},         {"prev_family", e.key.prev_family},
                            {"trials", e.trials},       {"failures", e.failures},     {"rate", e.rate},
                            {"backoff_level", analytics::to_string(e.backoff_level)}};
    }
    return ordered_json{{"logic_version", fold_.analytics.logic.id()},
                        {"last_applied_seq", fold_.analytics.last_applied_seq},
                        {"rates", analytics::rate_table(fold_.analytics)}};
}

ordered_json Service::lines() const {
    std::shared_lock lock(mutex_);
    ordered_json arr = ordered_json::array();
    for (const auto& l : sim_->plant_state().lines) {
        const auto h = analytics::line_hazard(fold_.analytics, l.id);
        arr.push_back({{"id", l.id},
                       {"state", resched::to_string(l.state)},
                       {"ready_at", l.ready_at},
                       {"last_family", l.last_family},
                       {"in_flight", l.in_flight},
                       {"hazard_per_hour", h.hazard},
                       {"failure_events", h.failure_events}});
    }
    return arr;
}

ordered_json Service::metrics() const {
    std::shared_lock lock(mutex_);
    Schedule current;
    current.shift_start = scenario_.shift_start;
    current.shift_length = scenario_.shift_length;
    for (const auto& j : sim_->jobs())
        if (j.status != sim::JobStatus::Stranded) current.lines[j.line_id].push_back(j.job);
    const MetricsContext ctx{&sim_->catalog(), &baseline_plant_, analytics::rate_fn(fold_.analytics), 1.0};
    const MetricsReport base = compute_metrics(baseline_, ctx);
    const MetricsReport cur = compute_metrics(current, ctx);
    return ordered_json{
        {"clock", sim_->clock()},
        {"baseline", resched::to_json(base)},
        {"current", resched::to_json(cur)},
        {"usage_reduction_pct", exp::reduction_pct(static_cast<double>(base.total_usage), static_cast<double>(cur.total_usage))},
        {"stddev_reduction_pct", exp::reduction_pct(base.utilization_stddev, cur.utilization_stddev)}};
}

std::string Service::state_hash() const {
    std::shared_lock lock(mutex_);
    return fold_.hash();
}

Minutes Service::clock() const {
    std::shared_lock lock(mutex_);
    return sim_->clock();
}

std::vector<Event> Service::events() const { return log_->read_from(1); }

std::vector<Proposal> Service::proposal_list() const {
    std::shared_lock lock(mutex_);
    return proposals_;
}

PlantState Service::plant_state() const {
    std::shared_lock lock(mutex_);
    return sim_->plant_state();
}

std::map<std::string, sim::OrderFate> Service::order_fates() const {
    std::shared_lock lock(mutex_);
    return sim_->order_fates();
}

}  // namespace resched::svc
