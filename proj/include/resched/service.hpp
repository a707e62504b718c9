#pragma once

#include <condition_variable>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "resched/experiment.hpp"
#include "resched/optimizer.hpp"
#include "resched/simulator.hpp"

namespace resched::svc {

class NotFound : public Error {
  public:
    using Error::Error;
};

class Conflict : public Error {
  public:
    Conflict(std::string what, nlohmann::ordered_json detail = {})
        : Error(std::move(what)), detail_(std::move(detail)) {}
    const nlohmann::ordered_json& detail() const { return detail_; }

  private:
    nlohmann::ordered_json detail_;
};

struct Config {
    std::string scenario;                        // path or bundled name
    std::map<std::string, std::string> tokens;   // bearer token -> principal
    situation::SituationModel situation_model;
    opt::GaParams ga;
    opt::ObjectiveWeights weights;
    bool auto_execute = false;
    int predictive_k = 1;
    int port = 8080;
    std::string bind = "127.0.0.1";
    std::string data_dir;                        // empty: nothing persisted
    std::string ui_dir;                          // optional static mount
    std::string logic = "mt5";
    bool execute_baseline_on_start = true;
    bool sync = true;                            // fdatasync event log appends

    /// Relative paths resolve against `base_dir`.
    static Config from_json(const nlohmann::json& j, const std::string& base_dir = ".");
    static Config load(const std::string& path);
};

enum class ProposalStatus { Pending, Adjusted, Executed, Superseded, Rejected };
const char* to_string(ProposalStatus s);

struct Move {
    std::string order_id;
    std::optional<std::string> line;
    std::optional<std::size_t> position;
    std::optional<bool> pin;
};

Move move_from_json(const nlohmann::json& j);

struct Proposal {
    std::string id;
    Schedule schedule;
    opt::FitnessVector fitness;
    opt::FitnessVector original_fitness;
    opt::FitnessVector baseline_fitness;
    double scalar = 0.0;
    std::string trigger;  // situation id, "manual" or "predictive:<line>"
    ProposalStatus status = ProposalStatus::Pending;
    Minutes created_at = 0;
    std::vector<nlohmann::ordered_json> adjustments;
    std::set<std::string> pinned;
    std::optional<std::uint64_t> executed_seq;
    PlantState plant;  // plant the schedule was built against
    std::shared_ptr<const analytics::AnalyticsState> rates;
    opt::ObjectiveWeights weights;
};

nlohmann::ordered_json to_json(const Proposal& p);

struct AuditRecord {
    std::uint64_t n = 0;
    Minutes ts = 0;
    std::string principal;
    std::string action;
    nlohmann::ordered_json request;
    std::string outcome;
};

nlohmann::ordered_json to_json(const AuditRecord& a);

struct Frame {
    std::uint64_t id = 0;
    std::string type;
    nlohmann::ordered_json data;
};

/// The command loop: owns simulator, event log, analytics, situations and proposals.
///
/// Every mutating command is journaled before it runs and executes under an
/// exclusive lock; reads take a shared lock. A service constructed on a data
/// directory with existing files re-runs the journal and checks the regenerated
/// events against the stored log.
class Service {
  public:
    explicit Service(Config config);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    // Mutating commands. Each returns the response body.
    nlohmann::ordered_json ingest(const std::vector<Event>& bodies);
    nlohmann::ordered_json advance(Minutes until);
    nlohmann::ordered_json inject_failure(const std::string& line, std::optional<Minutes> at);
    nlohmann::ordered_json optimize(const nlohmann::json& request);
    nlohmann::ordered_json adjust(const std::string& id, const std::vector<Move>& moves);
    nlohmann::ordered_json execute(const std::string& id);
    nlohmann::ordered_json acknowledge(const std::string& situation_id);

    // Reads.
    nlohmann::ordered_json current_schedule() const;
    nlohmann::ordered_json proposals() const;
    nlohmann::ordered_json proposal(const std::string& id) const;
    nlohmann::ordered_json situations(std::uint64_t since) const;
    nlohmann::ordered_json failure_rates(const std::optional<std::string>& recipe,
                                         const std::optional<std::string>& line,
                                         const std::optional<std::string>& prev_family) const;
    nlohmann::ordered_json lines() const;
    nlohmann::ordered_json metrics() const;

    std::string state_hash() const;
    Minutes clock() const;
    std::vector<Event> events() const;
    std::vector<Proposal> proposal_list() const;
    PlantState plant_state() const;
    std::map<std::string, sim::OrderFate> order_fates() const;
    const Config& config() const { return config_; }

    /// Principal for a bearer token, if known.
    std::optional<std::string> authenticate(const std::string& token) const;
    void audit(const std::string& principal, const std::string& action, nlohmann::ordered_json request,
               const std::string& outcome);
    std::vector<AuditRecord> audit_records() const;

    /// Frames with id > after; waits up to `timeout_ms` when there are none.
    std::vector<Frame> frames_after(std::uint64_t after, int timeout_ms) const;
    /// Wakes waiting stream readers (used at shutdown).
    void close_streams();
    bool streams_closed() const;

  private:
    struct Outcome {
        std::vector<std::uint64_t> seqs;
        std::vector<std::string> situations;
        std::vector<std::string> proposals;
    };

    void start();
    void recover(const std::vector<nlohmann::json>& journal);
    void journal(const nlohmann::ordered_json& entry);
    nlohmann::ordered_json dispatch(const nlohmann::json& entry);

    nlohmann::ordered_json do_ingest(const std::vector<Event>& bodies);
    nlohmann::ordered_json do_advance(Minutes until);
    nlohmann::ordered_json do_inject(const std::string& line, std::optional<Minutes> at);
    nlohmann::ordered_json do_optimize(const nlohmann::json& request);
    nlohmann::ordered_json do_adjust(const std::string& id, const std::vector<Move>& moves);
    nlohmann::ordered_json do_execute(const std::string& id);
    nlohmann::ordered_json do_ack(const std::string& id);

    std::uint64_t publish(Event body, Outcome& out);
    void publish_all(std::vector<Event> bodies, Outcome& out);
    void react(Outcome& out);
    void trigger(const situation::Situation& s, Outcome& out);
    Proposal& add_proposal(Proposal p, Outcome& out);
    void commit(Proposal& p, Outcome& out);
    void emit_frame(const std::string& type, nlohmann::ordered_json data);
    Proposal& find_proposal(const std::string& id);
    const Proposal& find_proposal(const std::string& id) const;
    opt::GaParams ga_params(const nlohmann::json& request) const;
    static nlohmann::ordered_json outcome_json(const Outcome& out);

    Config config_;
    ScenarioConfig scenario_;
    std::optional<sim::Simulator> sim_;
    std::unique_ptr<EventLog> log_;
    StateFold fold_;
    std::vector<Proposal> proposals_;
    std::map<std::string, opt::Contingency> contingencies_;
    std::set<std::string> acked_;
    std::vector<situation::Situation> notices_;  // infeasibility raised by the trigger loop
    std::vector<std::string> pending_triggers_;  // situation ids awaiting the trigger loop
    Schedule baseline_;
    PlantState baseline_plant_;
    std::uint64_t next_proposal_ = 1;
    std::uint64_t next_notice_ = 1;
    int depth_ = 0;
    bool replaying_ = false;

    mutable std::shared_mutex mutex_;
    std::mutex journal_mutex_;
    int journal_fd_ = -1;

    mutable std::mutex audit_mutex_;
    std::vector<AuditRecord> audit_;
    int audit_fd_ = -1;

    mutable std::mutex frame_mutex_;
    mutable std::condition_variable frame_cv_;
    std::vector<Frame> frames_;
    bool closed_ = false;
};

}  // namespace resched::svc
