#pragma once

// Append-only audit trail, one JSON object per line.
//
// Each entry is written with a single write(2) on an O_APPEND descriptor, so
// a line either lands whole or not at all. Entries are never rewritten.

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <chrono>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace nodectl::master {

enum class AuditOutcome { acked, timeout, error };

constexpr std::string_view to_string(AuditOutcome o) noexcept {
  switch (o) {
    case AuditOutcome::acked: return "acked";
    case AuditOutcome::timeout: return "timeout";
    case AuditOutcome::error: return "error";
  }
  return "error";
}

struct AuditEntry {
  std::string wall_time;  // ISO-8601 UTC, millisecond precision
  std::string actor;
  std::string target;     // node address, block name, or "broadcast"
  std::string command;
  AuditOutcome outcome = AuditOutcome::acked;
  std::string detail;     // set for error outcomes

  friend bool operator==(const AuditEntry&, const AuditEntry&) = default;
};

inline nlohmann::json to_json(const AuditEntry& e) {
  nlohmann::json j{{"wall_time", e.wall_time}, {"actor", e.actor},       {"target", e.target},
                   {"command", e.command},     {"outcome", std::string(to_string(e.outcome))}};
  if (!e.detail.empty()) j["detail"] = e.detail;
  return j;
}

inline AuditEntry audit_entry_from_json(const nlohmann::json& j) {
  AuditEntry e;
  e.wall_time = j.at("wall_time").get<std::string>();
  e.actor = j.at("actor").get<std::string>();
  e.target = j.at("target").get<std::string>();
  e.command = j.at("command").get<std::string>();
  const auto outcome = j.at("outcome").get<std::string>();
  e.outcome = outcome == "acked" ? AuditOutcome::acked : outcome == "timeout" ? AuditOutcome::timeout : AuditOutcome::error;
  e.detail = j.value("detail", std::string());
  return e;
}

inline std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

struct AuditFilter {
  std::optional<std::string> since;  // inclusive, compared as ISO-8601 text
  std::optional<std::string> until;  // exclusive
  std::optional<std::string> actor;
  std::optional<std::string> target;
  std::size_t limit = 0;             // 0 = no limit; keeps the most recent

  bool matches(const AuditEntry& e) const {
    if (since && e.wall_time < *since) return false;
    if (until && e.wall_time >= *until) return false;
    if (actor && e.actor != *actor) return false;
    if (target && e.target != *target) return false;
    return true;
  }
};

class AuditError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {
    fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw AuditError("storage-io: cannot open " + path_.string() + ": " + std::strerror(errno));
  }

  AuditLog(const AuditLog&) = delete;
  AuditLog& operator=(const AuditLog&) = delete;

  ~AuditLog() {
    if (fd_ >= 0) ::close(fd_);
  }

  const std::filesystem::path& path() const noexcept { return path_; }

  void append(const AuditEntry& entry) {
    const std::string line = to_json(entry).dump() + '\n';
    std::lock_guard lock(mu_);
    const ssize_t n = ::write(fd_, line.data(), line.size());
    if (n != static_cast<ssize_t>(line.size())) {
      throw AuditError("storage-io: short write to " + path_.string());
    }
    ++appended_;
  }

  std::uint64_t appended() const {
    std::lock_guard lock(mu_);
    return appended_;
  }

  // Lines that fail to parse (e.g. a torn tail after a crash) are skipped.
  std::vector<AuditEntry> query(const AuditFilter& filter = {}) const {
    std::lock_guard lock(mu_);
    std::ifstream in(path_);
    if (!in) throw AuditError("storage-io: cannot read " + path_.string());
    std::vector<AuditEntry> out;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) continue;
      try {
        auto e = audit_entry_from_json(j);
        if (filter.matches(e)) out.push_back(std::move(e));
      } catch (const nlohmann::json::exception&) {
        continue;
      }
    }
    if (filter.limit != 0 && out.size() > filter.limit) {
      out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(filter.limit));
    }
    return out;
  }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  mutable std::mutex mu_;
  std::uint64_t appended_ = 0;
};

}  // namespace nodectl::master
