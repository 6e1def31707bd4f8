#pragma once

// I/O-server layer. Owns the simulated cluster and the master controller,
// funnels every bus transaction through a single FIFO worker, and writes one
// audit entry per operation.

#include <condition_variable>
#include <deque>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "nodectl/audit_log.hpp"
#include "nodectl/bus_sim.hpp"
#include "nodectl/config.hpp"
#include "nodectl/master.hpp"
#include "nodectl/node_emulator.hpp"
#include "nodectl/registry.hpp"

namespace nodectl {

// Runs submitted jobs one at a time, in submission order, on its own thread.
class SerialExecutor {
 public:
  SerialExecutor() : worker_([this] { run(); }) {}

  SerialExecutor(const SerialExecutor&) = delete;
  SerialExecutor& operator=(const SerialExecutor&) = delete;

  ~SerialExecutor() {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_one();
    worker_.join();
  }

  template <typename F>
  auto submit(F&& fn) -> std::future<std::invoke_result_t<F>> {
    using R = std::invoke_result_t<F>;
    auto task = std::make_shared<std::packaged_task<R()>>(std::forward<F>(fn));
    auto fut = task->get_future();
    {
      std::lock_guard lock(mu_);
      jobs_.emplace_back([task] { (*task)(); });
    }
    cv_.notify_one();
    return fut;
  }

  template <typename F>
  auto run_sync(F&& fn) -> std::invoke_result_t<F> {
    return submit(std::forward<F>(fn)).get();
  }

 private:
  void run() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !jobs_.empty(); });
        if (jobs_.empty()) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
      }
      job();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  bool stopping_ = false;
  std::thread worker_;
};

// The bus plus its emulated node-controllers.
class SimulatedCluster {
 public:
  SimulatedCluster(const bus::BusConfig& bus_config, const std::vector<node::NodeConfig>& nodes)
      : bus_(bus_config) {
    for (const auto& nc : nodes) add_node(nc);
  }

  bus::Bus& bus() noexcept { return bus_; }
  const bus::Bus& bus() const noexcept { return bus_; }

  node::EmulatedNode& add_node(const node::NodeConfig& cfg) {
    nodes_.push_back(std::make_unique<node::EmulatedNode>(bus_, cfg));
    return *nodes_.back();
  }

  const std::vector<std::unique_ptr<node::EmulatedNode>>& nodes() const noexcept { return nodes_; }

  // First node whose DIP switches currently read `address`.
  node::EmulatedNode* find(std::uint8_t address) {
    for (auto& n : nodes_) {
      if (n->controller().read_dip() == address) return n.get();
    }
    return nullptr;
  }

 private:
  bus::Bus bus_;  // destroyed after the nodes
  std::vector<std::unique_ptr<node::EmulatedNode>> nodes_;
};

struct BlockResult {
  master::AuditOutcome overall = master::AuditOutcome::acked;
  std::vector<master::NodeOutcome> nodes;
};

class ControlService {
 public:
  using Clock = std::function<std::string()>;

  explicit ControlService(Config cfg, Clock clock = master::utc_now_iso8601)
      : cfg_(std::move(cfg)),
        clock_(std::move(clock)),
        cluster_(cfg_.bus, cfg_.nodes),
        audit_(cfg_.audit_path),
        master_(cluster_.bus(), registry_, cfg_.policy) {
    if (!cfg_.state_path.empty() && std::filesystem::exists(cfg_.state_path)) registry_.load(cfg_.state_path);
  }

  const Config& config() const noexcept { return cfg_; }

  master::CommandOutcome command(std::uint8_t address, protocol::CommandCode code, const std::string& actor) {
    return audited(actor, std::to_string(address), std::string(protocol::command_name(code)), [&] {
      auto out = master_.send_command(address, code);
      return std::make_pair(out, outcome_of(out));
    });
  }

  master::CommandOutcome power(std::uint8_t address, bool on, const std::string& actor) {
    return command(address, on ? protocol::CommandCode::PowerOn : protocol::CommandCode::PowerOff, actor);
  }

  master::CommandOutcome status(std::uint8_t address, const std::string& actor) {
    return command(address, protocol::CommandCode::StatusQuery, actor);
  }

  void broadcast(protocol::CommandCode code, const std::string& actor) {
    audited(actor, "broadcast", std::string(protocol::command_name(code)), [&] {
      master_.broadcast(code);
      return std::make_pair(0, Verdict{master::AuditOutcome::acked, ""});
    });
  }

  std::vector<std::uint8_t> scan(unsigned from, unsigned to, const std::string& actor) {
    const std::string target = std::to_string(from) + "-" + std::to_string(to);
    return audited(actor, target, "SCAN", [&] {
      auto found = master_.scan_bus(from, to);
      return std::make_pair(found, Verdict{master::AuditOutcome::acked, std::to_string(found.size()) + " responders"});
    });
  }

  BlockResult power_block(const std::string& name, bool on, const std::string& actor) {
    return audited(actor, name, on ? "BLOCK_POWER_ON" : "BLOCK_POWER_OFF", [&] {
      BlockResult r;
      r.nodes = master_.power_block(name, on);
      std::size_t acked = 0;
      for (const auto& n : r.nodes) acked += n.outcome.acked() ? 1 : 0;
      Verdict v{master::AuditOutcome::acked, ""};
      if (acked == 0 && !r.nodes.empty()) {
        v.outcome = master::AuditOutcome::timeout;
      } else if (acked != r.nodes.size()) {
        v = {master::AuditOutcome::error,
             "partial: " + std::to_string(acked) + "/" + std::to_string(r.nodes.size()) + " acked"};
      }
      r.overall = v.outcome;
      return std::make_pair(r, v);
    });
  }

  Expected<master::SensorReading, master::SensorFailure> sensors(std::uint8_t address, const std::string& actor) {
    using Result = Expected<master::SensorReading, master::SensorFailure>;
    return audited(actor, std::to_string(address), "READ_SENSORS", [&] {
      Result r = master_.read_sensors(address);
      Verdict v{master::AuditOutcome::acked, ""};
      if (!r) {
        v.outcome = r.error().kind == master::SensorFailure::Kind::timeout ? master::AuditOutcome::timeout
                                                                            : master::AuditOutcome::error;
        v.detail = r.error().describe();
      }
      return std::make_pair(r, v);
    });
  }

  void define_block(const std::string& name, const std::vector<std::uint8_t>& members, const std::string& actor) {
    audited(actor, name, "DEFINE_BLOCK", [&] {
      for (auto a : members) {
        if (!protocol::is_unicast_address(a)) {
          throw master::MasterError(master::MasterError::Code::invalid_address, "block member out of range");
        }
      }
      registry_.set_block(name, members);
      return std::make_pair(0, Verdict{master::AuditOutcome::acked, ""});
    });
  }

  std::vector<master::NodeRecord> nodes() const { return registry_.nodes(); }
  std::optional<master::NodeRecord> node(std::uint8_t address) const { return registry_.find(address); }
  std::map<std::string, std::vector<std::uint8_t>> blocks() const { return registry_.blocks(); }
  const master::Registry& registry() const noexcept { return registry_; }

  std::vector<master::AuditEntry> audit(const master::AuditFilter& filter = {}) const { return audit_.query(filter); }

  std::vector<bus::BusEvent> trace(std::size_t limit) {
    return executor_.run_sync([&] { return cluster_.bus().recent_events(limit); });
  }

  std::optional<node::NodeDiagnostics> diagnostics(std::uint8_t address) {
    return executor_.run_sync([&]() -> std::optional<node::NodeDiagnostics> {
      auto* n = cluster_.find(address);
      if (!n) return std::nullopt;
      return n->controller().diagnostics();
    });
  }

  // Arbitrary access to the simulation, serialized with bus transactions.
  template <typename F>
  auto with_simulation(F&& fn) {
    return executor_.run_sync([&] { return fn(cluster_, master_); });
  }

 private:
  struct Verdict {
    master::AuditOutcome outcome;
    std::string detail;
  };

  static Verdict outcome_of(const master::CommandOutcome& o) {
    return {o.acked() ? master::AuditOutcome::acked : master::AuditOutcome::timeout, ""};
  }

  // Runs `op` on the bus worker; exactly one audit line per call, errors included.
  template <typename Op, typename R = typename std::invoke_result_t<Op>::first_type>
  R audited(const std::string& actor, const std::string& target, const std::string& command, Op&& op) {
    return executor_.run_sync([&]() -> R {
      master::AuditEntry entry{clock_(), actor.empty() ? "anonymous" : actor, target, command,
                               master::AuditOutcome::acked, ""};
      try {
        auto [result, verdict] = op();
        entry.outcome = verdict.outcome;
        entry.detail = verdict.detail;
        audit_.append(entry);
        persist();
        return result;
      } catch (const master::MasterError& e) {
        entry.outcome = master::AuditOutcome::error;
        entry.detail = std::string(master::to_string(e.code())) + ": " + e.what();
        audit_.append(entry);
        throw;
      }
    });
  }

  void persist() {
    if (!cfg_.state_path.empty()) registry_.save(cfg_.state_path);
  }

  Config cfg_;
  Clock clock_;
  master::Registry registry_;
  SimulatedCluster cluster_;
  master::AuditLog audit_;
  master::MasterController master_;
  SerialExecutor executor_;  // last member: joins before anything it touches is destroyed
};

}  // namespace nodectl
