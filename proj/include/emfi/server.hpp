#pragma once

#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "emfi/config.hpp"
#include "emfi/error.hpp"
#include "emfi/rig.hpp"
#include "emfi/serialization.hpp"

namespace emfi {

struct ServerOptions {
  std::string bind = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::filesystem::path workspace = "emfi-workspace";
  std::size_t queue_capacity = 8;
  Duration keepalive = std::chrono::seconds(15);
  Duration command_timeout = std::chrono::seconds(60);
};

/// EMFI_BIND ("host" or "host:port") and EMFI_WORKSPACE override the options.
void apply_env_overrides(ServerOptions& options);

/// HTTP status and ApiError code for an error: validation 400, state 409,
/// not_found 404, busy 503, device 502.
std::pair<int, std::string_view> http_error(ErrorCode code);

struct ServerEvent {
  std::optional<std::uint64_t> id;  // attempt sequence id; lifecycle events carry none
  std::string type;
  std::string data;
};

bool is_terminal_event(std::string_view type);

/// Ordered event history of one campaign with blocking reads for streams.
class EventChannel {
 public:
  void publish(ServerEvent event);
  /// Events from position `from` on, waiting up to `wait` if there are none.
  std::vector<ServerEvent> read_from(std::size_t from, Duration wait);
  /// Position just past the attempt event with the given id, or the first
  /// attempt event with a larger id.
  std::size_t position_after(std::uint64_t id) const;
  std::optional<std::uint64_t> last_id() const;
  std::size_t size() const;
  void set_running(bool running);
  bool running() const;
  /// Wakes all readers; used on shutdown.
  void close();
  bool closed() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::vector<ServerEvent> events_;
  bool running_ = false;
  bool closed_ = false;
};

/// Progress-independent statistics of a record set, as served by
/// GET /campaigns/{id}: outcome histogram, per-plan and per-cell stats and,
/// for sweeps, delay groups.
Json campaign_stats_json(const CampaignConfig& config, const std::vector<AttemptRecord>& records);

/// Text/event-stream framing of one event.
std::string format_sse(const ServerEvent& event);

/// REST control surface and event stream over one rig. All device access
/// runs on a single worker thread fed by a bounded queue.
class ApiServer {
 public:
  ApiServer(ServerOptions options, std::unique_ptr<Rig> rig);
  ~ApiServer();
  ApiServer(const ApiServer&) = delete;
  ApiServer& operator=(const ApiServer&) = delete;

  /// Binds the listening socket and returns the port.
  int bind();
  /// Serves until stop(); binds first if needed.
  void serve();
  /// bind() plus serve() on a background thread.
  int start();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace emfi
