#include "resched/event_log.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

namespace resched {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kKindNames[] = {
    "SensorReading",   "BatchCompleted",   "DeviceFailure", "DeviceRecovered",
    "OrderCreated",    "MaintenanceStart", "MaintenanceEnd", "ScheduleExecuted",
};

template <class T>
T field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw Error(std::string("missing field '") + name + "'");
    return it->get<T>();
}

template <class T>
T field_or(const json& j, const char* name, T fallback) {
    auto it = j.find(name);
    return it == j.end() || it->is_null() ? fallback : it->get<T>();
}

}  // namespace

const char* to_string(EventKind k) { return kKindNames[static_cast<int>(k)]; }

EventKind event_kind_from_string(const std::string& s) {
    for (int i = 0; i < 8; ++i)
        if (s == kKindNames[i]) return static_cast<EventKind>(i);
    throw Error("unknown event kind '" + s + "'");
}

ScheduleExecuted flatten_schedule(const Schedule& schedule, const PlantState& plant,
                                  const Catalog& catalog, std::string proposal_id) {
    ScheduleExecuted out;
    out.proposal_id = std::move(proposal_id);
    out.shift_start = schedule.shift_start;
    out.shift_length = schedule.shift_length;
    for (const auto& [line_id, jobs] : schedule.lines) {
        const LineStatus* line = plant.line(line_id);
        std::string prev = line ? line->last_family : std::string{};
        for (const auto& job : jobs) {
            const Recipe* recipe = catalog.recipe_of_order(job.order_id);
            out.jobs.push_back({line_id, job.order_id, recipe ? recipe->id : std::string{}, prev,
                                job.changeover_start, job.processing_start, job.end});
            if (recipe) prev = recipe->family;
        }
    }
    return out;
}

ordered_json payload_to_json(const Payload& p) {
    ordered_json j = ordered_json::object();
    std::visit(
        [&](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, SensorReading>) {
                j["sensor_id"] = v.sensor_id;
                j["line_id"] = v.line_id;
                j["value"] = v.value;
                j["source_trust"] = v.source_trust;
            } else if constexpr (std::is_same_v<T, BatchCompleted>) {
                j["order_id"] = v.order_id;
                j["recipe_id"] = v.recipe_id;
                j["line_id"] = v.line_id;
                j["prev_family"] = v.prev_family;
                j["start"] = v.start;
                j["end"] = v.end;
                j["outcome"] = v.outcome == BatchOutcome::Success ? "Success" : "Failed";
            } else if constexpr (std::is_same_v<T, DeviceFailure>) {
                j["line_id"] = v.line_id;
                j["source_trust"] = v.source_trust;
                j["injected"] = v.injected;
                j["duplicate"] = v.duplicate;
            } else if constexpr (std::is_same_v<T, OrderCreated>) {
                j["order_id"] = v.order.id;
                j["recipe_id"] = v.order.recipe_id;
                j["release"] = v.order.release;
                j["due"] = v.order.due;
                j["priority"] = v.order.priority;
            } else if constexpr (std::is_same_v<T, ScheduleExecuted>) {
                j["proposal_id"] = v.proposal_id;
                j["shift_start"] = v.shift_start;
                j["shift_length"] = v.shift_length;
                ordered_json jobs = ordered_json::array();
                for (const auto& pj : v.jobs) {
                    ordered_json o;
                    o["line_id"] = pj.line_id;
                    o["order_id"] = pj.order_id;
                    o["recipe_id"] = pj.recipe_id;
                    o["prev_family"] = pj.prev_family;
                    o["changeover_start"] = pj.changeover_start;
                    o["processing_start"] = pj.processing_start;
                    o["end"] = pj.end;
                    jobs.push_back(std::move(o));
                }
                j["jobs"] = std::move(jobs);
            } else {
                // DeviceRecovered, MaintenanceStart, MaintenanceEnd
                j["line_id"] = v.line_id;
            }
        },
        p);
    return j;
}

Payload payload_from_json(EventKind kind, const json& j) {
    if (!j.is_object()) throw Error("payload must be an object");
    switch (kind) {
        case EventKind::SensorReading:
            return SensorReading{field<std::string>(j, "sensor_id"),
                                 field_or<std::string>(j, "line_id", ""), field<double>(j, "value"),
                                 field_or<double>(j, "source_trust", 1.0)};
        case EventKind::BatchCompleted: {
            BatchCompleted b;
            b.order_id = field<std::string>(j, "order_id");
            b.recipe_id = field<std::string>(j, "recipe_id");
            b.line_id = field<std::string>(j, "line_id");
            b.prev_family = field_or<std::string>(j, "prev_family", "");
            b.start = field<Minutes>(j, "start");
            b.end = field<Minutes>(j, "end");
            const auto outcome = field<std::string>(j, "outcome");
            if (outcome != "Success" && outcome != "Failed")
                throw Error("outcome must be Success or Failed");
            b.outcome = outcome == "Success" ? BatchOutcome::Success : BatchOutcome::Failed;
            return b;
        }
        case EventKind::DeviceFailure:
            return DeviceFailure{field<std::string>(j, "line_id"),
                                 field_or<double>(j, "source_trust", 1.0),
                                 field_or<bool>(j, "injected", false),
                                 field_or<bool>(j, "duplicate", false)};
        case EventKind::DeviceRecovered:
            return DeviceRecovered{field<std::string>(j, "line_id")};
        case EventKind::OrderCreated:
            return OrderCreated{Order{field<std::string>(j, "order_id"),
                                      field<std::string>(j, "recipe_id"), field<Minutes>(j, "release"),
                                      field<Minutes>(j, "due"), field_or<int>(j, "priority", 0)}};
        case EventKind::MaintenanceStart:
            return MaintenanceStart{field<std::string>(j, "line_id")};
        case EventKind::MaintenanceEnd:
            return MaintenanceEnd{field<std::string>(j, "line_id")};
        case EventKind::ScheduleExecuted: {
            ScheduleExecuted s;
            s.proposal_id = field<std::string>(j, "proposal_id");
            s.shift_start = field<Minutes>(j, "shift_start");
            s.shift_length = field<Minutes>(j, "shift_length");
            for (const auto& o : field<json>(j, "jobs"))
                s.jobs.push_back({field<std::string>(o, "line_id"), field<std::string>(o, "order_id"),
                                  field<std::string>(o, "recipe_id"),
                                  field_or<std::string>(o, "prev_family", ""),
                                  field<Minutes>(o, "changeover_start"),
                                  field<Minutes>(o, "processing_start"), field<Minutes>(o, "end")});
            return s;
        }
    }
    throw Error("unhandled event kind");
}

ordered_json event_to_json(const Event& e) {
    ordered_json j;
    j["seq"] = e.seq;
    j["ts"] = e.ts;
    j["kind"] = to_string(e.kind());
    j["payload"] = payload_to_json(e.payload);
    return j;
}

Event event_from_json(const json& j) {
    if (!j.is_object()) throw Error("event must be a JSON object");
    Event e;
    e.seq = field_or<std::uint64_t>(j, "seq", 0);
    e.ts = field<Minutes>(j, "ts");
    e.payload = payload_from_json(event_kind_from_string(field<std::string>(j, "kind")),
                                  field_or<json>(j, "payload", json::object()));
    return e;
}

std::string event_to_line(const Event& e) { return event_to_json(e).dump() + "\n"; }

namespace {

struct Parsed {
    std::vector<Event> events;
    std::size_t valid_bytes = 0;
    std::vector<std::string> warnings;
};

Parsed parse_log(const std::string& path, const std::string& data) {
    Parsed out;
    std::size_t pos = 0;
    while (pos < data.size()) {
        const std::size_t nl = data.find('\n', pos);
        const std::uint64_t expected = out.events.size() + 1;
        if (nl == std::string::npos) {
            out.warnings.push_back(path + ": discarded torn record after seq " +
                                   std::to_string(expected - 1) + " (" +
                                   std::to_string(data.size() - pos) + " bytes)");
            break;
        }
        const std::string line = data.substr(pos, nl - pos);
        Event e;
        try {
            e = event_from_json(json::parse(line));
        } catch (const std::exception& ex) {
            throw Error("log corrupt at seq " + std::to_string(expected) + ": " + ex.what());
        }
        if (e.seq != expected)
            throw Error("log corrupt at seq " + std::to_string(expected) + ": found seq " +
                        std::to_string(e.seq));
        if (!out.events.empty() && e.ts < out.events.back().ts)
            throw Error("log corrupt at seq " + std::to_string(expected) + ": timestamp regression");
        out.events.push_back(std::move(e));
        pos = nl + 1;
        out.valid_bytes = pos;
    }
    return out;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_all(int fd, const std::string& data) {
    std::size_t done = 0;
    while (done < data.size()) {
        const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(std::string("log write failed: ") + std::strerror(errno));
        }
        done += static_cast<std::size_t>(n);
    }
}

}  // namespace

EventLog::~EventLog() {
    if (fd_ >= 0) ::close(fd_);
}

EventLog::Opened EventLog::open(const std::string& path, LogOptions options) {
    const std::string data = slurp(path);
    Parsed parsed = parse_log(path, data);

    const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT, 0644);
    if (fd < 0) throw Error("cannot open log '" + path + "': " + std::strerror(errno));
    if (parsed.valid_bytes < data.size() &&
        ::ftruncate(fd, static_cast<off_t>(parsed.valid_bytes)) != 0) {
        ::close(fd);
        throw Error("cannot truncate torn record in '" + path + "'");
    }
    ::lseek(fd, 0, SEEK_END);

    Opened out;
    out.log = std::make_unique<EventLog>();
    out.log->path_ = path;
    out.log->fd_ = fd;
    out.log->options_ = options;
    out.log->events_ = std::move(parsed.events);
    out.head = out.log->events_.size();
    out.warnings = std::move(parsed.warnings);
    return out;
}

std::uint64_t EventLog::append_locked(Event& body) {
    if (!events_.empty() && body.ts < events_.back().ts)
        throw Error("timestamp regression: " + std::to_string(body.ts) + " < " +
                    std::to_string(events_.back().ts));
    body.seq = events_.size() + 1;
    if (fd_ >= 0) {
        const off_t before = ::lseek(fd_, 0, SEEK_END);
        try {
            write_all(fd_, event_to_line(body));
            if (options_.sync && ::fdatasync(fd_) != 0)
                throw Error(std::string("log sync failed: ") + std::strerror(errno));
        } catch (...) {
            if (::ftruncate(fd_, before) == 0) ::lseek(fd_, 0, SEEK_END);
            throw;
        }
    }
    events_.push_back(body);
    return body.seq;
}

std::uint64_t EventLog::append(Event body) {
    std::unique_lock lock(mutex_);
    return append_locked(body);
}

std::vector<std::uint64_t> EventLog::append_batch(std::vector<Event> bodies) {
    std::unique_lock lock(mutex_);
    Minutes last = events_.empty() ? std::numeric_limits<Minutes>::min() : events_.back().ts;
    for (const auto& b : bodies) {
        if (b.ts < last)
            throw Error("timestamp regression: " + std::to_string(b.ts) + " < " + std::to_string(last));
        last = b.ts;
    }
    std::vector<std::uint64_t> seqs;
    for (auto& b : bodies) seqs.push_back(append_locked(b));
    return seqs;
}

std::vector<Event> EventLog::read_from(std::uint64_t seq_start) const {
    std::shared_lock lock(mutex_);
    if (seq_start == 0) seq_start = 1;
    if (seq_start > events_.size()) return {};
    return {events_.begin() + static_cast<std::ptrdiff_t>(seq_start - 1), events_.end()};
}

std::uint64_t EventLog::head() const {
    std::shared_lock lock(mutex_);
    return events_.size();
}

std::optional<Minutes> EventLog::last_ts() const {
    std::shared_lock lock(mutex_);
    if (events_.empty()) return std::nullopt;
    return events_.back().ts;
}

std::vector<Event> read_log_file(const std::string& path, std::vector<std::string>* warnings) {
    struct stat st {};
    if (::stat(path.c_str(), &st) != 0) throw Error("cannot read log '" + path + "'");
    Parsed parsed = parse_log(path, slurp(path));
    if (warnings) *warnings = std::move(parsed.warnings);
    return std::move(parsed.events);
}

}  // namespace resched
