#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "resched/model.hpp"

namespace resched {

enum class EventKind {
    SensorReading,
    BatchCompleted,
    DeviceFailure,
    DeviceRecovered,
    OrderCreated,
    MaintenanceStart,
    MaintenanceEnd,
    ScheduleExecuted,
};

const char* to_string(EventKind k);
EventKind event_kind_from_string(const std::string& s);

enum class BatchOutcome { Success, Failed };

struct SensorReading {
    std::string sensor_id;
    std::string line_id;  // set for line-status sensors: value < 0.5 reads as "down"
    double value = 0.0;
    double source_trust = 1.0;
    bool operator==(const SensorReading&) const = default;
};

struct BatchCompleted {
    std::string order_id;
    std::string recipe_id;
    std::string line_id;
    std::string prev_family;
    Minutes start = 0;
    Minutes end = 0;
    BatchOutcome outcome = BatchOutcome::Success;
    bool operator==(const BatchCompleted&) const = default;
};

struct DeviceFailure {
    std::string line_id;
    double source_trust = 1.0;
    bool injected = false;
    bool duplicate = false;  // reported for a line that was already down
    bool operator==(const DeviceFailure&) const = default;
};

struct DeviceRecovered {
    std::string line_id;
    bool operator==(const DeviceRecovered&) const = default;
};

struct OrderCreated {
    Order order;
    bool operator==(const OrderCreated&) const = default;
};

struct MaintenanceStart {
    std::string line_id;
    bool operator==(const MaintenanceStart&) const = default;
};

struct MaintenanceEnd {
    std::string line_id;
    bool operator==(const MaintenanceEnd&) const = default;
};

struct PlannedJob {
    std::string line_id;
    std::string order_id;
    std::string recipe_id;
    std::string prev_family;
    Minutes changeover_start = 0;
    Minutes processing_start = 0;
    Minutes end = 0;
    bool operator==(const PlannedJob&) const = default;
};

/// A schedule committed to the plant, flattened so the log is self-contained.
struct ScheduleExecuted {
    std::string proposal_id;
    Minutes shift_start = 0;
    Minutes shift_length = 0;
    std::vector<PlannedJob> jobs;
    bool operator==(const ScheduleExecuted&) const = default;
};

using Payload = std::variant<SensorReading, BatchCompleted, DeviceFailure, DeviceRecovered,
                             OrderCreated, MaintenanceStart, MaintenanceEnd, ScheduleExecuted>;

struct Event {
    std::uint64_t seq = 0;  // assigned by the log; 0 for bodies not yet appended
    Minutes ts = 0;
    Payload payload;

    EventKind kind() const { return static_cast<EventKind>(payload.index()); }
    bool operator==(const Event&) const = default;
};

/// Flattens a schedule for a ScheduleExecuted payload.
ScheduleExecuted flatten_schedule(const Schedule& schedule, const PlantState& plant,
                                  const Catalog& catalog, std::string proposal_id);

nlohmann::ordered_json payload_to_json(const Payload& p);
Payload payload_from_json(EventKind kind, const nlohmann::json& j);

/// Wire/disk form: {"seq", "ts", "kind", "payload"} in that order.
nlohmann::ordered_json event_to_json(const Event& e);
/// Accepts the disk form, or a body without "seq" (seq = 0).
Event event_from_json(const nlohmann::json& j);
std::string event_to_line(const Event& e);

struct LogOptions {
    bool sync = true;  // fdatasync after every append
};

/// Append-only, sequence-numbered event log, optionally backed by an NDJSON file.
///
/// One writer appends; readers take copies under a shared lock, so an iteration
/// sees a prefix of the log and never a reordered or partial event.
class EventLog {
  public:
    /// In-memory log.
    EventLog() = default;
    ~EventLog();
    EventLog(const EventLog&) = delete;
    EventLog& operator=(const EventLog&) = delete;

    struct Opened;
    /// Opens (creating if absent) a file-backed log, recovering complete records.
    /// A torn trailing record is discarded and truncated with a warning; any other
    /// damage throws "log corrupt at seq N".
    static Opened open(const std::string& path, LogOptions options = {});

    std::uint64_t append(Event body);
    /// Validates a whole batch against the head before appending any of it.
    std::vector<std::uint64_t> append_batch(std::vector<Event> bodies);

    std::vector<Event> read_from(std::uint64_t seq_start) const;
    std::uint64_t head() const;
    std::optional<Minutes> last_ts() const;
    const std::string& path() const { return path_; }

  private:
    std::uint64_t append_locked(Event& body);

    std::string path_;
    int fd_ = -1;
    LogOptions options_;
    std::vector<Event> events_;
    mutable std::shared_mutex mutex_;
};

struct EventLog::Opened {
    std::unique_ptr<EventLog> log;
    std::uint64_t head = 0;
    std::vector<std::string> warnings;
};

/// Reads every complete event from a log file without opening it for writing.
std::vector<Event> read_log_file(const std::string& path, std::vector<std::string>* warnings = nullptr);

}  // namespace resched
