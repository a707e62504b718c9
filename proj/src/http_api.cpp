#include "resched/http_api.hpp"

#include <httplib.h>

#include <sstream>

#include "resched/codec.hpp"

namespace resched::svc {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void send(httplib::Response& res, int status, const ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

std::string bearer(const httplib::Request& req) {
    const std::string h = req.get_header_value("Authorization");
    if (h.rfind("Bearer ", 0) == 0) return h.substr(7);
    if (req.has_param("token")) return req.get_param_value("token");
    return {};
}

json parse_body(const httplib::Request& req) {
    if (req.body.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
    return json::parse(req.body);
}

std::vector<Event> parse_events(const std::string& body) {
    std::vector<Event> out;
    const auto first = body.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return out;
    if (body[first] == '[') {
        for (const auto& e : json::parse(body)) out.push_back(event_from_json(e));
        return out;
    }
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line))
        if (line.find_first_not_of(" \t\r") != std::string::npos) out.push_back(event_from_json(json::parse(line)));
    return out;
}

}  // namespace

struct HttpApi::Impl {
    explicit Impl(Service& s) : service(s) {}

    Service& service;
    httplib::Server server;

    std::optional<std::string> principal(const httplib::Request& req) const {
        return service.authenticate(bearer(req));
    }

    /// Runs a read handler behind authentication.
    void read(const httplib::Request& req, httplib::Response& res, const std::function<ordered_json()>& fn) {
        if (!principal(req)) return send(res, 401, {{"error", "unauthorized"}});
        respond(res, fn, nullptr);
    }

    /// Runs a mutating handler; exactly one audit record is written whatever the outcome.
    void mutate(const httplib::Request& req, httplib::Response& res, const std::string& action,
                const std::function<ordered_json()>& fn) {
        ordered_json summary{{"method", req.method}, {"path", req.path}, {"body_bytes", req.body.size()}};
        const auto who = principal(req);
        if (!who) {
            service.audit("anonymous", action, summary, "rejected: unauthorized");
            return send(res, 401, {{"error", "unauthorized"}});
        }
        std::string outcome;
        respond(res, fn, &outcome);
        service.audit(*who, action, summary, outcome);
    }

    void respond(httplib::Response& res, const std::function<ordered_json()>& fn, std::string* outcome) {
        auto fail = [&](int status, ordered_json body) {
            if (outcome) *outcome = "rejected: " + body.value("error", std::string("error"));
            send(res, status, body);
        };
        try {
            ordered_json body = fn();
            if (outcome) *outcome = "ok";
            send(res, 200, body);
        } catch (const ValidationError& e) {
            fail(422, {{"error", e.what()}, {"violations", to_json(e.violations())}});
        } catch (const NotFound& e) {
            fail(404, {{"error", e.what()}});
        } catch (const Conflict& e) {
            ordered_json body{{"error", e.what()}};
            if (e.detail().is_object())
                for (const auto& [k, v] : e.detail().items()) body[k] = v;
            fail(409, body);
        } catch (const Error& e) {
            fail(400, {{"error", e.what()}});
        } catch (const json::exception& e) {
            fail(400, {{"error", std::string("malformed request: ") + e.what()}});
        } catch (const std::exception& e) {
            fail(500, {{"error", e.what()}});
        }
    }

    void routes() {
        server.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
            send(res, 200, {{"status", "ok"}});
        });

        server.Post("/api/events", [this](const httplib::Request& req, httplib::Response& res) {
            mutate(req, res, "ingest", [&] { return service.ingest(parse_events(req.body)); });
        });
        server.Post("/api/optimize", [this](const httplib::Request& req, httplib::Response& res) {
            mutate(req, res, "optimize", [&] { return service.optimize(parse_body(req)); });
        });
        server.Post("/api/proposals/:id/adjust", [this](const httplib::Request& req, httplib::Response& res) {
            mutate(req, res, "adjust", [&] {
                const json body = parse_body(req);
                const json& list = body.is_array() ? body : body.at("moves");
                std::vector<Move> moves;
                for (const auto& m : list) moves.push_back(move_from_json(m));
                return service.adjust(req.path_params.at("id"), moves);
            });
        });
        server.Post("/api/proposals/:id/execute", [this](const httplib::Request& req, httplib::Response& res) {
            mutate(req, res, "execute", [&] { return service.execute(req.path_params.at("id")); });
        });
        server.Post("/api/situations/:id/ack", [this](const httplib::Request& req, httplib::Response& res) {
            mutate(req, res, "ack", [&] { return service.acknowledge(req.path_params.at("id")); });
        });
        server.Post("/api/simulator/inject-failure", [this](const httplib::Request& req, httplib::Response& res) {
            mutate(req, res, "inject-failure", [&] {
                const json body = parse_body(req);
                std::optional<Minutes> at;
                if (body.contains("at") && !body["at"].is_null()) at = body["at"].get<Minutes>();
                return service.inject_failure(body.at("line").get<std::string>(), at);
            });
        });
        server.Post("/api/simulator/advance", [this](const httplib::Request& req, httplib::Response& res) {
            mutate(req, res, "advance", [&] { return service.advance(parse_body(req).at("until").get<Minutes>()); });
        });

        server.Get("/api/schedule/current", [this](const httplib::Request& req, httplib::Response& res) {
            read(req, res, [&] { return service.current_schedule(); });
        });
        server.Get("/api/proposals", [this](const httplib::Request& req, httplib::Response& res) {
            read(req, res, [&] { return service.proposals(); });
        });
        server.Get("/api/proposals/:id", [this](const httplib::Request& req, httplib::Response& res) {
            read(req, res, [&] { return service.proposal(req.path_params.at("id")); });
        });
        server.Get("/api/situations", [this](const httplib::Request& req, httplib::Response& res) {
            read(req, res, [&] {
                std::uint64_t since = 0;
                if (req.has_param("since")) since = std::stoull(req.get_param_value("since"));
                return service.situations(since);
            });
        });
        server.Get("/api/analytics/failure-rates", [this](const httplib::Request& req, httplib::Response& res) {
            read(req, res, [&] {
                auto param = [&](const char* name) -> std::optional<std::string> {
                    if (!req.has_param(name)) return std::nullopt;
                    return req.get_param_value(name);
                };
                return service.failure_rates(param("recipe"), param("line"), param("prev_family"));
            });
        });
        server.Get("/api/lines", [this](const httplib::Request& req, httplib::Response& res) {
            read(req, res, [&] { return service.lines(); });
        });
        server.Get("/api/metrics", [this](const httplib::Request& req, httplib::Response& res) {
            read(req, res, [&] { return service.metrics(); });
        });

        server.Get("/api/stream", [this](const httplib::Request& req, httplib::Response& res) {
            if (!principal(req)) return send(res, 401, {{"error", "unauthorized"}});
            std::uint64_t last = 0;
            const std::string resume = req.get_header_value("Last-Event-ID");
            if (!resume.empty())
                last = std::stoull(resume);
            else if (req.has_param("since"))
                last = std::stoull(req.get_param_value("since"));
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream", [this, last](std::size_t, httplib::DataSink& sink) mutable {
                    const auto frames = service.frames_after(last, 1000);
                    if (frames.empty()) {
                        if (service.streams_closed()) return false;
                        const std::string ping = ": keep-alive\n\n";
                        return sink.write(ping.data(), ping.size());
                    }
                    for (const auto& f : frames) {
                        const std::string msg = "id: " + std::to_string(f.id) + "\nevent: " + f.type +
                                                "\ndata: " + f.data.dump() + "\n\n";
                        if (!sink.write(msg.data(), msg.size())) return false;
                        last = f.id;
                    }
                    return true;
                });
        });

        const std::string ui = service.config().ui_dir;
        if (!ui.empty()) server.set_mount_point("/", ui);
    }
};

HttpApi::HttpApi(Service& service) : impl_(std::make_unique<Impl>(service)) { impl_->routes(); }

HttpApi::~HttpApi() { stop(); }

int HttpApi::bind(const std::string& host, int port) {
    if (port == 0) return impl_->server.bind_to_any_port(host);
    if (!impl_->server.bind_to_port(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void HttpApi::serve() { impl_->server.listen_after_bind(); }

void HttpApi::stop() {
    impl_->service.close_streams();
    impl_->server.stop();
}

}  // namespace resched::svc
