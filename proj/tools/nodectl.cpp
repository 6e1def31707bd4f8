// nodectl: run the master service over a simulated RS-485 cluster, or talk
// to a running one over HTTP.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "nodectl/config.hpp"
#include "nodectl/http_api.hpp"
#include "nodectl/service.hpp"

namespace {

using nlohmann::json;

constexpr const char* kServerEnvVar = "NODECTL_SERVER";
constexpr const char* kDefaultConfigFile = "nodectl.json";

struct ClientOptions {
  std::string server = "http://127.0.0.1:8080";
  std::string actor = "anonymous";
};

httplib::Headers headers(const ClientOptions& opt) { return {{nodectl::http::kActorHeader, opt.actor}}; }

int report(const httplib::Result& res) {
  if (!res) {
    std::cerr << "nodectl: request failed: " << httplib::to_string(res.error()) << '\n';
    return 2;
  }
  auto body = json::parse(res->body, nullptr, false);
  if (body.is_discarded()) {
    std::cout << res->body;
  } else {
    std::cout << body.dump(2) << '\n';
  }
  return res->status == 200 ? 0 : 1;
}

std::pair<std::string, int> split_bind(const std::string& bind) {
  const auto colon = bind.rfind(':');
  if (colon == std::string::npos) return {bind, 8080};
  return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
}

nodectl::http::ApiServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int serve(const std::optional<std::string>& config_flag, const std::string& bind_flag, const std::string& static_dir,
          bool demo) {
  nodectl::Config cfg;
  std::optional<std::string> fallback;
  if (std::filesystem::exists(kDefaultConfigFile)) fallback = kDefaultConfigFile;
  auto path = demo ? std::nullopt : nodectl::resolve_config_path(config_flag, fallback);
  if (path) {
    cfg = nodectl::load_config(*path);
    std::cerr << "nodectl: config " << path->string() << '\n';
  } else {
    cfg = nodectl::demo_config();
    std::cerr << "nodectl: no config found, using the built-in 8-node demo bus\n";
  }
  if (!bind_flag.empty()) cfg.bind = bind_flag;
  if (!static_dir.empty()) cfg.static_dir = static_dir;

  nodectl::ControlService service(cfg);
  nodectl::http::ApiServer server(service);
  if (!cfg.static_dir.empty() && !server.mount_static(cfg.static_dir)) {
    std::cerr << "nodectl: cannot serve static files from " << cfg.static_dir << '\n';
    return 1;
  }
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  const auto [host, port] = split_bind(cfg.bind);
  std::cerr << "nodectl: " << cfg.nodes.size() << " simulated nodes, listening on " << host << ':' << port << '\n';
  if (!server.listen(host, port)) {
    std::cerr << "nodectl: bind-failure on " << cfg.bind << '\n';
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cluster node power control over a simulated RS-485 bus"};
  app.require_subcommand(1);

  ClientOptions opt;
  if (const char* env = std::getenv(kServerEnvVar); env && *env) opt.server = env;
  app.add_option("--server", opt.server, "Base URL of a running `nodectl serve` (env NODECTL_SERVER)");
  app.add_option("--actor", opt.actor, "Name recorded in the audit log");

  auto* serve_cmd = app.add_subcommand("serve", "Run the master service and HTTP API");
  std::optional<std::string> config_path;
  std::string bind, static_dir;
  bool demo = false;
  serve_cmd->add_option("-c,--config", config_path, "Config file (else $NODECTL_CONFIG, else ./nodectl.json)");
  serve_cmd->add_option("--bind", bind, "host:port, overrides server.bind");
  serve_cmd->add_option("--static-dir", static_dir, "Serve a dashboard build from this directory");
  serve_cmd->add_flag("--demo", demo, "Ignore config files and simulate 8 nodes at addresses 1..8");

  auto* scan_cmd = app.add_subcommand("scan", "Discover responding node-controllers");
  unsigned scan_from = 1, scan_to = 254;
  scan_cmd->add_option("--from", scan_from)->check(CLI::Range(1, 254));
  scan_cmd->add_option("--to", scan_to)->check(CLI::Range(1, 254));

  auto* power_cmd = app.add_subcommand("power", "Switch one node (or all, by broadcast) on or off");
  std::string power_target, power_state;
  power_cmd->add_option("target", power_target, "Node address 1..254 or 'all'")->required();
  power_cmd->add_option("state", power_state, "on|off")->required()->check(CLI::IsMember({"on", "off"}));

  auto* status_cmd = app.add_subcommand("status", "Query a node's relay state");
  int status_addr = 0;
  status_cmd->add_option("address", status_addr)->required()->check(CLI::Range(1, 254));

  auto* sensors_cmd = app.add_subcommand("sensors", "Read a node's temperature and humidity");
  int sensors_addr = 0;
  sensors_cmd->add_option("address", sensors_addr)->required()->check(CLI::Range(1, 254));

  auto* blocks_cmd = app.add_subcommand("blocks", "List, define or switch blocks of nodes");
  blocks_cmd->require_subcommand(0, 1);
  auto* blocks_create = blocks_cmd->add_subcommand("create", "Define (or redefine) a block");
  std::string block_name;
  std::vector<int> block_nodes;
  blocks_create->add_option("name", block_name)->required();
  blocks_create->add_option("nodes", block_nodes)->required()->check(CLI::Range(1, 254));
  auto* blocks_power = blocks_cmd->add_subcommand("power", "Switch every node in a block");
  std::string block_power_name, block_power_state;
  blocks_power->add_option("name", block_power_name)->required();
  blocks_power->add_option("state", block_power_state)->required()->check(CLI::IsMember({"on", "off"}));

  auto* audit_cmd = app.add_subcommand("audit", "Show audit log entries");
  std::string since, until, actor_filter, target_filter;
  std::size_t audit_limit = 0;
  audit_cmd->add_option("--since", since, "ISO-8601 UTC lower bound (inclusive)");
  audit_cmd->add_option("--until", until, "ISO-8601 UTC upper bound (exclusive)");
  audit_cmd->add_option("--by", actor_filter, "Only entries from this actor");
  audit_cmd->add_option("--target", target_filter, "Only entries for this target");
  audit_cmd->add_option("--limit", audit_limit, "Most recent N entries");

  auto* trace_cmd = app.add_subcommand("trace", "Dump recent bus events");
  std::size_t trace_limit = 200;
  trace_cmd->add_option("--limit", trace_limit);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config_path, bind, static_dir, demo);

    httplib::Client client(opt.server);
    client.set_read_timeout(60, 0);
    const auto hdrs = headers(opt);

    if (*scan_cmd) {
      return report(client.Post("/bus/scan", hdrs, json{{"from", scan_from}, {"to", scan_to}}.dump(),
                                "application/json"));
    }
    if (*power_cmd) {
      const json body{{"state", power_state}};
      if (power_target == "all") return report(client.Post("/bus/broadcast", hdrs, body.dump(), "application/json"));
      return report(client.Post("/nodes/" + power_target + "/power", hdrs, body.dump(), "application/json"));
    }
    if (*status_cmd) return report(client.Get("/nodes/" + std::to_string(status_addr), hdrs));
    if (*sensors_cmd) return report(client.Get("/nodes/" + std::to_string(sensors_addr) + "/sensors", hdrs));
    if (*blocks_cmd) {
      if (*blocks_create) {
        return report(client.Post("/blocks", hdrs, json{{"name", block_name}, {"nodes", block_nodes}}.dump(),
                                  "application/json"));
      }
      if (*blocks_power) {
        return report(client.Post("/blocks/" + block_power_name + "/power", hdrs,
                                  json{{"state", block_power_state}}.dump(), "application/json"));
      }
      return report(client.Get("/blocks", hdrs));
    }
    if (*audit_cmd) {
      httplib::Params params;
      if (!since.empty()) params.emplace("since", since);
      if (!until.empty()) params.emplace("until", until);
      if (!actor_filter.empty()) params.emplace("actor", actor_filter);
      if (!target_filter.empty()) params.emplace("target", target_filter);
      if (audit_limit != 0) params.emplace("limit", std::to_string(audit_limit));
      return report(client.Get("/audit", params, hdrs));
    }
    if (*trace_cmd) return report(client.Get("/bus/trace?limit=" + std::to_string(trace_limit), hdrs));
  } catch (const std::exception& e) {
    std::cerr << "nodectl: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
