#pragma once

// JSON-over-HTTP control surface for operators and the dashboard.
//
//   GET  /nodes                      registry snapshot
//   GET  /nodes/{addr}               live STATUS_QUERY + record + diagnostics
//   POST /nodes/{addr}/power         {"state":"on"|"off"}
//   GET  /nodes/{addr}/sensors       temperature / humidity in tenths
//   POST /bus/scan                   {"from":1,"to":254}
//   POST /bus/broadcast              {"state":"on"|"off"}
//   GET  /bus/trace?limit=N          text/plain trace-export lines
//   GET  /blocks
//   POST /blocks                     {"name":"alpha","nodes":[1,2,3]}
//   POST /blocks/{name}/power        {"state":"on"|"off"}
//   GET  /audit?since=&until=&actor=&target=&limit=
//
// The caller's identity is the X-Actor header ("anonymous" when absent).

#include <atomic>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "nodectl/service.hpp"

namespace nodectl::http {

using nlohmann::json;

inline constexpr const char* kActorHeader = "X-Actor";

namespace detail {

inline void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, std::string_view code, const std::string& detail = {}) {
  json body{{"error", code}};
  if (!detail.empty()) body["detail"] = detail;
  send_json(res, status, body);
}

inline std::string actor_of(const httplib::Request& req) {
  auto a = req.get_header_value(kActorHeader);
  return a.empty() ? "anonymous" : a;
}

inline std::optional<std::uint8_t> parse_address(const std::string& text) {
  if (text.empty() || text.size() > 3) return std::nullopt;
  const int v = std::stoi(text);
  if (v < 1 || v > 254) return std::nullopt;
  return static_cast<std::uint8_t>(v);
}

// {"state":"on"|"off"} -> true/false
inline std::optional<bool> parse_state(const std::string& body) {
  auto j = json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("state") || !j["state"].is_string()) return std::nullopt;
  const auto s = j["state"].get<std::string>();
  if (s == "on") return true;
  if (s == "off") return false;
  return std::nullopt;
}

inline std::string outcome_name(const master::CommandOutcome& o) { return o.acked() ? "acked" : "timeout"; }

inline json payload_json(const std::vector<std::uint8_t>& p) { return json(p); }

}  // namespace detail

class ApiServer {
 public:
  explicit ApiServer(ControlService& service) : service_(service) { routes(); }

  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  ~ApiServer() { stop(); }

  bool mount_static(const std::string& dir) { return server_.set_mount_point("/", dir); }

  // Binds and serves on a background thread. Port 0 picks a free port.
  // Returns the bound port, or -1 on bind failure.
  int start(const std::string& host, int port) {
    const int bound = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (bound < 0) return -1;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return bound;
  }

  // Serves on the calling thread until stop().
  bool listen(const std::string& host, int port) { return server_.listen(host, port); }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

 private:
  void routes() {
    using detail::send_error;
    using detail::send_json;

    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const master::MasterError& e) {
        const int status = e.code() == master::MasterError::Code::unknown_block ? 404
                           : e.code() == master::MasterError::Code::bus_detached ? 503
                                                                                  : 400;
        send_error(res, status, master::to_string(e.code()), e.what());
      } catch (const master::AuditError& e) {
        send_error(res, 500, "storage-io", e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, "internal", e.what());
      }
    });

    server_.Get("/nodes", [this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& r : service_.nodes()) out.push_back(master::to_json(r));
      send_json(res, 200, out);
    });

    server_.Get(R"(/nodes/(\d+))", [this](const httplib::Request& req, httplib::Response& res) {
      auto addr = detail::parse_address(req.matches[1]);
      if (!addr) return send_error(res, 400, "invalid-address");
      auto outcome = service_.status(*addr, detail::actor_of(req));
      json body{{"address", *addr}, {"outcome", detail::outcome_name(outcome)}};
      auto rec = service_.node(*addr);
      body["node"] = rec ? master::to_json(*rec) : json(nullptr);
      if (auto d = service_.diagnostics(*addr)) {
        body["diagnostics"] = {{"frames_seen", d->frames_seen},
                               {"frames_executed", d->frames_executed},
                               {"malformed", d->malformed},
                               {"responses_sent", d->responses_sent}};
      }
      send_json(res, 200, body);
    });

    server_.Post(R"(/nodes/(\d+)/power)", [this](const httplib::Request& req, httplib::Response& res) {
      auto addr = detail::parse_address(req.matches[1]);
      if (!addr) return send_error(res, 400, "invalid-address");
      auto state = detail::parse_state(req.body);
      if (!state) return send_error(res, 400, "bad-request", R"(body must be {"state":"on"|"off"})");
      auto outcome = service_.power(*addr, *state, detail::actor_of(req));
      send_json(res, 200, {{"address", *addr}, {"outcome", detail::outcome_name(outcome)}, {"attempts", outcome.attempts}});
    });

    server_.Get(R"(/nodes/(\d+)/sensors)", [this](const httplib::Request& req, httplib::Response& res) {
      auto addr = detail::parse_address(req.matches[1]);
      if (!addr) return send_error(res, 400, "invalid-address");
      auto r = service_.sensors(*addr, detail::actor_of(req));
      if (r) {
        send_json(res, 200, {{"address", *addr}, {"outcome", "acked"},
                             {"temperature", r->temperature_tenths}, {"humidity", r->humidity_tenths}});
        return;
      }
      const auto& f = r.error();
      json body{{"address", *addr},
                {"outcome", f.kind == master::SensorFailure::Kind::timeout ? "timeout" : "malformed-payload"},
                {"leg", f.leg == master::SensorFailure::Leg::temperature ? "temperature" : "humidity"}};
      send_json(res, 200, body);
    });

    server_.Post("/bus/scan", [this](const httplib::Request& req, httplib::Response& res) {
      unsigned from = 1, to = 254;
      if (!req.body.empty()) {
        auto j = json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.is_object()) return send_error(res, 400, "bad-request");
        from = j.value("from", from);
        to = j.value("to", to);
      }
      auto found = service_.scan(from, to, detail::actor_of(req));
      send_json(res, 200, {{"responders", found}});
    });

    server_.Post("/bus/broadcast", [this](const httplib::Request& req, httplib::Response& res) {
      auto state = detail::parse_state(req.body);
      if (!state) return send_error(res, 400, "bad-request", R"(body must be {"state":"on"|"off"})");
      service_.broadcast(*state ? protocol::CommandCode::PowerOn : protocol::CommandCode::PowerOff,
                         detail::actor_of(req));
      send_json(res, 200, {{"outcome", "acked"}});
    });

    server_.Get("/bus/trace", [this](const httplib::Request& req, httplib::Response& res) {
      std::size_t limit = 200;
      if (req.has_param("limit")) limit = std::stoul(req.get_param_value("limit"));
      std::ostringstream os;
      bus::write_trace(os, service_.trace(limit));
      res.set_content(os.str(), "text/plain");
    });

    server_.Get("/blocks", [this](const httplib::Request&, httplib::Response& res) {
      json out = json::array();
      for (const auto& [name, members] : service_.blocks()) out.push_back({{"name", name}, {"nodes", members}});
      send_json(res, 200, out);
    });

    server_.Post("/blocks", [this](const httplib::Request& req, httplib::Response& res) {
      auto j = json::parse(req.body, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("name") || !j["name"].is_string() ||
          !j.contains("nodes") || !j["nodes"].is_array()) {
        return send_error(res, 400, "bad-request", R"(body must be {"name":...,"nodes":[...]})");
      }
      std::vector<std::uint8_t> members;
      for (const auto& n : j["nodes"]) {
        if (!n.is_number_integer() || n.get<int>() < 1 || n.get<int>() > 254) {
          return send_error(res, 400, "invalid-address");
        }
        members.push_back(static_cast<std::uint8_t>(n.get<int>()));
      }
      const auto name = j["name"].get<std::string>();
      if (name.empty()) return send_error(res, 400, "bad-request", "empty block name");
      service_.define_block(name, members, detail::actor_of(req));
      send_json(res, 200, {{"name", name}, {"nodes", *service_.registry().block_members(name)}});
    });

    server_.Post(R"(/blocks/([^/]+)/power)", [this](const httplib::Request& req, httplib::Response& res) {
      auto state = detail::parse_state(req.body);
      if (!state) return send_error(res, 400, "bad-request", R"(body must be {"state":"on"|"off"})");
      auto r = service_.power_block(req.matches[1], *state, detail::actor_of(req));
      json results = json::array();
      for (const auto& n : r.nodes) {
        results.push_back({{"address", n.address}, {"outcome", detail::outcome_name(n.outcome)}});
      }
      const bool partial = r.overall == master::AuditOutcome::error;
      send_json(res, 200, {{"outcome", partial ? "partial" : std::string(master::to_string(r.overall))},
                           {"results", results}});
    });

    server_.Get("/audit", [this](const httplib::Request& req, httplib::Response& res) {
      master::AuditFilter f;
      if (req.has_param("since")) f.since = req.get_param_value("since");
      if (req.has_param("until")) f.until = req.get_param_value("until");
      if (req.has_param("actor")) f.actor = req.get_param_value("actor");
      if (req.has_param("target")) f.target = req.get_param_value("target");
      if (req.has_param("limit")) f.limit = std::stoul(req.get_param_value("limit"));
      json out = json::array();
      for (const auto& e : service_.audit(f)) out.push_back(master::to_json(e));
      send_json(res, 200, out);
    });
  }

  ControlService& service_;
  httplib::Server server_;
  std::thread thread_;
};

}  // namespace nodectl::http
