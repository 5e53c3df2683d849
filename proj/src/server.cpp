#include "emfi/server.hpp"

#include <atomic>
#include <cstdlib>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <thread>

#include <fmt/format.h>

#include "httplib.h"

#include "emfi/campaign.hpp"
#include "emfi/error.hpp"
#include "emfi/persistence.hpp"
#include "emfi/stats.hpp"

namespace emfi {

void apply_env_overrides(ServerOptions& options) {
  if (const char* bind = std::getenv("EMFI_BIND"); bind && *bind) {
    std::string value = bind;
    const auto colon = value.rfind(':');
    if (colon != std::string::npos && value.find(':') == colon) {
      options.port = std::stoi(value.substr(colon + 1));
      value.resize(colon);
    }
    options.bind = value;
  }
  if (const char* ws = std::getenv("EMFI_WORKSPACE"); ws && *ws) options.workspace = ws;
}

std::pair<int, std::string_view> http_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation:
    case ErrorCode::range:
    case ErrorCode::limit:
    case ErrorCode::parse:
    case ErrorCode::undefined_rate: return {400, "validation"};
    case ErrorCode::state:
    case ErrorCode::safety: return {409, "state"};
    case ErrorCode::not_found: return {404, "not_found"};
    case ErrorCode::busy: return {503, "busy"};
    case ErrorCode::device:
    case ErrorCode::timeout:
    case ErrorCode::io: return {502, "device"};
  }
  return {500, "device"};
}

bool is_terminal_event(std::string_view type) {
  return type == "completed" || type == "cancelled" || type == "failed";
}

// ---------------------------------------------------------------------------
// Event channel

void EventChannel::publish(ServerEvent event) {
  {
    std::lock_guard lock(mutex_);
    events_.push_back(std::move(event));
  }
  cv_.notify_all();
}

std::vector<ServerEvent> EventChannel::read_from(std::size_t from, Duration wait) {
  std::unique_lock lock(mutex_);
  cv_.wait_for(lock, wait, [&] { return closed_ || events_.size() > from; });
  if (from >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
}

std::size_t EventChannel::position_after(std::uint64_t id) const {
  std::lock_guard lock(mutex_);
  for (std::size_t i = 0; i < events_.size(); ++i) {
    if (events_[i].id && *events_[i].id >= id) return *events_[i].id == id ? i + 1 : i;
  }
  return events_.size();
}

std::optional<std::uint64_t> EventChannel::last_id() const {
  std::lock_guard lock(mutex_);
  for (auto it = events_.rbegin(); it != events_.rend(); ++it) {
    if (it->id) return it->id;
  }
  return std::nullopt;
}

std::size_t EventChannel::size() const {
  std::lock_guard lock(mutex_);
  return events_.size();
}

void EventChannel::set_running(bool running) {
  {
    std::lock_guard lock(mutex_);
    running_ = running;
  }
  cv_.notify_all();
}

bool EventChannel::running() const {
  std::lock_guard lock(mutex_);
  return running_;
}

void EventChannel::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventChannel::closed() const {
  std::lock_guard lock(mutex_);
  return closed_;
}

std::string format_sse(const ServerEvent& event) {
  std::string out;
  if (event.id) out += fmt::format("id: {}\n", *event.id);
  out += fmt::format("event: {}\ndata: {}\n\n", event.type, event.data);
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

Json campaign_stats_json(const CampaignConfig& config, const std::vector<AttemptRecord>& records) {
  OutcomeHistogram histogram{};
  SuccessStats total;
  for (const auto& r : records) {
    ++histogram[static_cast<std::size_t>(r.outcome)];
    if (counts_as_attempt(r, config.count_error_attempts)) {
      ++total.attempts;
      if (is_success(r.outcome)) ++total.successes;
    }
  }
  Json hist = Json::object();
  for (std::size_t i = 0; i < kOutcomeCount; ++i) {
    hist[std::string(to_string(static_cast<AttemptOutcome>(i)))] = histogram[i];
  }
  Json plans = Json::array();
  for (const auto& p : stats_by_plan(records, config.count_error_attempts)) {
    plans.push_back({{"trigger", p.plan},
                     {"successes", p.stats.successes},
                     {"attempts", p.stats.attempts},
                     {"rate", p.stats.attempts ? Json(format_rate(p.stats)) : Json(nullptr)}});
  }
  Json cells = Json::array();
  for (const auto& c : scan_result_from_records(records, config.count_error_attempts).cells) {
    const auto count = [&](AttemptOutcome o) { return c.histogram[static_cast<std::size_t>(o)]; };
    cells.push_back({{"die", c.die},
                     {"successes", c.stats.successes},
                     {"attempts", c.stats.attempts},
                     {"faults", count(AttemptOutcome::PayloadFault)},
                     {"crashes", count(AttemptOutcome::Crash)},
                     {"bypasses", count(AttemptOutcome::BypassSuccess)}});
  }
  Json j{{"records", records.size()}, {"histogram", hist}, {"total", total}, {"plans", plans}, {"cells", cells}};
  if (total.attempts > 0) {
    const auto ci = wilson_interval(total, 0.95);
    j["rate"] = success_rate(total);
    j["wilson95"] = {ci.low, ci.high};
  }
  if (config.sweep) {
    Json groups = Json::array();
    for (const auto& g : group_delays(records, config.sweep->group_threshold)) {
      groups.push_back({{"lo", g.lo}, {"hi", g.hi}, {"median", g.median}, {"successes", g.successes}});
    }
    j["groups"] = groups;
  }
  return j;
}

// ---------------------------------------------------------------------------
// Server

namespace {

struct CampaignEntry {
  std::string id;
  CampaignConfig config;
  CampaignPaths paths;
  EventChannel events;

  mutable std::mutex mutex;
  std::string status = "queued";
  std::string error;
  Campaign* campaign = nullptr;  // set while running on the worker
  bool cancel_requested = false;
  CampaignProgress progress;
  std::vector<AttemptRecord> records;
};

struct Snapshot {
  bool homed = false;
  StagePosition position;
  bool powered = false;
  SupplyVoltages supply;
  std::string pulse_state = "DISARMED";
  std::optional<std::string> campaign;
};

Json error_body(std::string_view code, std::string_view message) {
  return Json{{"error", {{"code", code}, {"message", message}}}};
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  Json j = parse_json(req.body);
  if (!j.is_object()) throw Error(ErrorCode::validation, "request body must be a JSON object");
  return j;
}

}  // namespace

struct ApiServer::Impl {
  Impl(ServerOptions o, std::unique_ptr<Rig> r) : options(std::move(o)), rig(std::move(r)) {
    std::filesystem::create_directories(options.workspace / "campaigns");
    rig->calibration() = [&] {
      CalibrationStore store((options.workspace / "calibration.json").string());
      if (std::filesystem::exists(options.workspace / "calibration.json")) {
        store.load();
      } else {
        store.from_json(rig->calibration().to_json());
      }
      return store;
    }();
    calibration_json = rig->calibration().to_json();
    for (const auto& entry : std::filesystem::directory_iterator(options.workspace / "campaigns")) {
      const auto name = entry.path().filename().string();
      if (name.size() > 1 && name[0] == 'c') {
        try {
          next_id = std::max<std::uint64_t>(next_id, std::stoull(name.substr(1)) + 1);
        } catch (const std::exception&) {
        }
      }
    }
    worker = std::thread([this] { work(); });
    routes();
  }

  ~Impl() {
    shutdown();
    if (worker.joinable()) worker.join();
  }

  // --- worker ---------------------------------------------------------------

  void work() {
    for (;;) {
      std::function<void()> job;
      {
        std::unique_lock lock(queue_mutex);
        queue_cv.wait(lock, [&] { return stopping || !queue.empty(); });
        if (queue.empty()) return;
        job = std::move(queue.front());
        queue.pop_front();
      }
      job();
    }
  }

  void enqueue(std::function<void()> job) {
    {
      std::lock_guard lock(queue_mutex);
      if (stopping) throw Error(ErrorCode::busy, "server is shutting down");
      if (queue.size() >= options.queue_capacity) throw Error(ErrorCode::busy, "command queue is full");
      queue.push_back(std::move(job));
    }
    queue_cv.notify_one();
  }

  /// Runs `fn` on the worker and waits for its result.
  Json call(std::function<Json()> fn) {
    auto task = std::make_shared<std::packaged_task<Json()>>(std::move(fn));
    auto result = task->get_future();
    enqueue([task] { (*task)(); });
    if (result.wait_for(options.command_timeout) != std::future_status::ready) {
      throw Error(ErrorCode::timeout, "rig command did not complete in time");
    }
    return result.get();
  }

  void require_idle() const {
    if (campaign_active) throw Error(ErrorCode::busy, "a campaign is running");
  }

  void refresh_snapshot() {
    // Worker thread only.
    const auto& st = rig->motion().state();
    std::lock_guard lock(snapshot_mutex);
    snapshot.homed = st.homed;
    snapshot.position = st.position;
    snapshot.pulse_state = rig->interlock().pulse_armed() ? "ARMED" : "DISARMED";
  }

  // --- campaigns ------------------------------------------------------------

  std::shared_ptr<CampaignEntry> find(const std::string& id) {
    std::lock_guard lock(campaigns_mutex);
    const auto it = campaigns.find(id);
    if (it != campaigns.end()) return it->second;
    // Campaigns from earlier server runs are loaded from the workspace.
    const auto dir = options.workspace / "campaigns" / id;
    if (id.find('/') != std::string::npos || !std::filesystem::exists(CampaignPaths{dir}.config())) {
      throw Error(ErrorCode::not_found, fmt::format("no campaign '{}'", id));
    }
    auto loaded = load_campaign(dir);
    auto entry = std::make_shared<CampaignEntry>();
    entry->id = id;
    entry->config = loaded.config;
    entry->paths = CampaignPaths{dir};
    entry->status = "stored";
    entry->records = std::move(loaded.log.records);
    entry->progress.completed = entry->records.size();
    campaigns.emplace(id, entry);
    return entry;
  }

  void run_campaign(const std::shared_ptr<CampaignEntry>& entry) {
    {
      std::lock_guard lock(entry->mutex);
      entry->status = "running";
      entry->error.clear();
    }
    entry->events.set_running(true);
    entry->events.publish({std::nullopt, "started", Json{{"id", entry->id}}.dump()});
    std::string final_status = "completed";
    std::string error;
    try {
      AttemptLog log(entry->paths.log());
      Campaign campaign(*rig, entry->config, &log);
      if (!log.existing().empty()) {
        campaign.resume(log.existing());
        const auto seen = entry->events.last_id();
        for (const auto& r : log.existing()) {
          if (!seen || r.seq > *seen) entry->events.publish({r.seq, "attempt", serialize_record(r)});
        }
      }
      {
        std::lock_guard lock(entry->mutex);
        entry->records = log.existing();
        entry->campaign = &campaign;
        entry->progress = campaign.progress();
        if (entry->cancel_requested) campaign.cancel();
      }
      campaign.set_observer([&](const AttemptRecord& r) {
        {
          std::lock_guard lock(entry->mutex);
          entry->records.push_back(r);
          entry->progress = campaign.progress();
        }
        {
          std::lock_guard lock(snapshot_mutex);
          snapshot.position = r.position;
          snapshot.homed = true;
        }
        entry->events.publish({r.seq, "attempt", serialize_record(r)});
      });
      campaign.run();
      {
        std::lock_guard lock(entry->mutex);
        entry->campaign = nullptr;
        entry->progress = campaign.progress();
        if (entry->progress.cancelled && entry->progress.completed < entry->progress.planned) {
          final_status = "cancelled";
        }
      }
      export_campaign(entry->paths.dir);
    } catch (const std::exception& e) {
      final_status = "failed";
      error = e.what();
      std::lock_guard lock(entry->mutex);
      entry->campaign = nullptr;
    }
    Json stats;
    {
      std::lock_guard lock(entry->mutex);
      entry->status = final_status;
      entry->error = error;
      entry->cancel_requested = false;
      stats = campaign_stats_json(entry->config, entry->records);
    }
    refresh_snapshot();
    {
      std::lock_guard lock(snapshot_mutex);
      snapshot.campaign.reset();
      snapshot.powered = false;
    }
    Json done{{"id", entry->id}, {"status", final_status}, {"stats", stats}};
    if (!error.empty()) done["error"] = error;
    entry->events.set_running(false);
    entry->events.publish({std::nullopt, final_status, done.dump()});
    campaign_active = false;
  }

  std::shared_ptr<CampaignEntry> start_campaign(const CampaignConfig& config,
                                                std::shared_ptr<CampaignEntry> existing = nullptr) {
    bool expected = false;
    if (!campaign_active.compare_exchange_strong(expected, true)) {
      throw Error(ErrorCode::busy, "a campaign is already running");
    }
    try {
      auto entry = existing;
      if (!entry) {
        entry = std::make_shared<CampaignEntry>();
        std::lock_guard lock(campaigns_mutex);
        entry->id = fmt::format("c{:04}", next_id++);
        entry->config = config;
        entry->paths = CampaignPaths{options.workspace / "campaigns" / entry->id};
        write_config_snapshot(entry->paths, config);
        campaigns.emplace(entry->id, entry);
      } else {
        std::lock_guard lock(entry->mutex);
        if (entry->status == "running" || entry->status == "queued") {
          throw Error(ErrorCode::state, fmt::format("campaign {} is already {}", entry->id, entry->status));
        }
        entry->status = "queued";
      }
      {
        std::lock_guard lock(snapshot_mutex);
        snapshot.campaign = entry->id;
        snapshot.supply = config.supply;
      }
      enqueue([this, entry] { run_campaign(entry); });
      return entry;
    } catch (...) {
      campaign_active = false;
      std::lock_guard lock(snapshot_mutex);
      snapshot.campaign.reset();
      throw;
    }
  }

  Json entry_json(const CampaignEntry& e) const {
    std::lock_guard lock(e.mutex);
    Json j{{"id", e.id},
           {"status", e.status},
           {"mode", std::string(to_string(e.config.mode()))},
           {"config", e.config},
           {"progress", {{"planned", e.progress.planned}, {"completed", e.progress.completed}}},
           {"stats", campaign_stats_json(e.config, e.records)}};
    if (!e.error.empty()) j["error"] = e.error;
    return j;
  }

  // --- HTTP -----------------------------------------------------------------

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static void reply(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  Handler guarded(Handler h) {
    return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
      try {
        h(req, res);
      } catch (const Error& e) {
        const auto [status, code] = http_error(e.code());
        reply(res, status, error_body(code, e.what()));
      } catch (const Json::exception& e) {
        reply(res, 400, error_body("validation", e.what()));
      } catch (const std::exception& e) {
        reply(res, 500, error_body("device", e.what()));
      }
    };
  }

  void routes() {
    http.Get("/status", guarded([this](const httplib::Request&, httplib::Response& res) {
      Snapshot s;
      {
        std::lock_guard lock(snapshot_mutex);
        s = snapshot;
      }
      const bool armed = rig->interlock().pulse_armed();
      reply(res, 200,
            Json{{"homed", s.homed},
                 {"position", s.position},
                 {"pulse", {{"armed", armed}, {"state", armed ? "ARMED" : s.pulse_state}}},
                 {"power", {{"on", s.powered}}},
                 {"supply", s.supply},
                 {"motion_permitted", rig->interlock().motion_permitted()},
                 {"busy", campaign_active.load()},
                 {"campaign", s.campaign ? Json(*s.campaign) : Json(nullptr)}});
    }));

    http.Post("/home", guarded([this](const httplib::Request&, httplib::Response& res) {
      require_idle();
      reply(res, 200, call([this] {
              rig->motion().home();
              refresh_snapshot();
              return Json{{"position", rig->motion().state().position}};
            }));
    }));

    http.Post("/jog", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      const StagePosition delta{body.value("dx", 0.0), body.value("dy", 0.0), body.value("dz", 0.0)};
      const double feed = body.value("feed", 5.0);
      if (!delta.is_finite() || !(feed > 0.0)) throw Error(ErrorCode::validation, "jog needs finite deltas and feed > 0");
      require_idle();
      reply(res, 200, call([this, delta, feed] {
              const auto ack = rig->motion().move_by(delta, MmPerSecond(feed));
              refresh_snapshot();
              return Json{{"position", ack.position}};
            }));
    }));

    http.Post("/pulse", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      const auto action = body.at("action").get<std::string>();
      require_idle();
      reply(res, 200, call([this, action] {
              auto& pulse = rig->pulse();
              if (action == "arm") {
                pulse.arm();
              } else if (action == "disarm") {
                pulse.disarm();
              } else {
                throw Error(ErrorCode::validation, fmt::format("unknown pulse action '{}'", action));
              }
              const auto st = pulse.status();
              {
                std::lock_guard lock(snapshot_mutex);
                snapshot.pulse_state = std::string(to_string(st.state));
              }
              return Json{{"state", to_string(st.state)}};
            }));
    }));

    http.Get("/calibration", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(snapshot_mutex);
      reply(res, 200, calibration_json);
    }));

    http.Post("/calibration", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      require_idle();
      reply(res, 200, call([this, body] { return update_calibration(body); }));
    }));

    http.Post("/campaigns", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const Json body = parse_body(req);
      const auto config = parse_campaign_config(body);
      const auto key = req.get_header_value("Idempotency-Key");
      std::unique_lock idem(idempotency_mutex);
      if (!key.empty()) {
        if (const auto it = idempotency.find(key); it != idempotency.end()) {
          if (it->second.second != config) {
            throw Error(ErrorCode::state, "idempotency key reused with a different campaign");
          }
          reply(res, 200, Json{{"id", it->second.first}});
          return;
        }
      }
      const auto entry = start_campaign(config);
      if (!key.empty()) idempotency.emplace(key, std::make_pair(entry->id, config));
      reply(res, 201, Json{{"id", entry->id}});
    }));

    http.Get("/campaigns", guarded([this](const httplib::Request&, httplib::Response& res) {
      Json list = Json::array();
      std::vector<std::shared_ptr<CampaignEntry>> entries;
      {
        std::lock_guard lock(campaigns_mutex);
        for (const auto& [id, e] : campaigns) entries.push_back(e);
      }
      for (const auto& e : entries) {
        std::lock_guard lock(e->mutex);
        list.push_back({{"id", e->id}, {"status", e->status}});
      }
      reply(res, 200, list);
    }));

    http.Get(R"(/campaigns/([A-Za-z0-9_-]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, entry_json(*find(req.matches[1])));
    }));

    http.Post(R"(/campaigns/([A-Za-z0-9_-]+)/cancel)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto entry = find(req.matches[1]);
                std::lock_guard lock(entry->mutex);
                if (entry->status != "running" && entry->status != "queued") {
                  throw Error(ErrorCode::state, fmt::format("campaign {} is {}", entry->id, entry->status));
                }
                entry->cancel_requested = true;
                if (entry->campaign) entry->campaign->cancel();
                reply(res, 202, Json{{"id", entry->id}, {"status", "cancelling"}});
              }));

    http.Post(R"(/campaigns/([A-Za-z0-9_-]+)/resume)",
              guarded([this](const httplib::Request& req, httplib::Response& res) {
                const auto entry = find(req.matches[1]);
                start_campaign(entry->config, entry);
                reply(res, 202, Json{{"id", entry->id}, {"status", "queued"}});
              }));

    http.Get("/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
      std::string id = req.get_param_value("campaign");
      if (id.empty()) {
        std::lock_guard lock(snapshot_mutex);
        if (snapshot.campaign) id = *snapshot.campaign;
      }
      if (id.empty()) {
        std::lock_guard lock(campaigns_mutex);
        if (!campaigns.empty()) id = campaigns.rbegin()->first;
      }
      if (id.empty()) throw Error(ErrorCode::not_found, "no campaign to stream");
      const auto entry = find(id);
      std::string last = req.get_header_value("Last-Event-ID");
      if (last.empty()) last = req.get_param_value("last_id");
      std::size_t start = 0;
      if (!last.empty()) {
        try {
          start = entry->events.position_after(std::stoull(last));
        } catch (const std::logic_error&) {
          throw Error(ErrorCode::validation, fmt::format("bad last event id '{}'", last));
        }
      }
      auto cursor = std::make_shared<std::size_t>(start);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream", [this, entry, cursor](std::size_t, httplib::DataSink& sink) {
            const auto batch = entry->events.read_from(*cursor, options.keepalive);
            if (entry->events.closed() || shutting_down) {
              sink.done();
              return true;
            }
            if (batch.empty()) {
              const std::string ping = ": keepalive\n\n";
              return sink.write(ping.data(), ping.size());
            }
            for (const auto& ev : batch) {
              const auto text = format_sse(ev);
              if (!sink.write(text.data(), text.size())) return false;
            }
            *cursor += batch.size();
            if (is_terminal_event(batch.back().type) && !entry->events.running() &&
                entry->events.size() == *cursor) {
              sink.done();
            }
            return true;
          });
    }));
  }

  Json update_calibration(const Json& body) {
    // Worker thread only.
    auto& store = rig->calibration();
    if (body.contains("tip")) store.change_tip(body.at("tip").get<ProbeTip>());
    if (body.contains("probe") || body.contains("camera")) {
      const auto pixel = [](const Json& p) { return PixelPoint{p.at("u").get<double>(), p.at("v").get<double>()}; };
      auto cal = compute_probe_offset(pixel(body.at("probe")), pixel(body.at("camera")),
                                      body.at("pixel_scale_um").get<double>());
      cal.probe_id = store.active_tip().id();
      cal.timestamp = rig->clock().now();
      store.set_offset(cal);
    }
    if (body.contains("anchor")) {
      const auto anchor = body.at("anchor").get<DieAnchor>();
      anchor.validate(rig->motion().limits());
      store.set_anchor(anchor);
    }
    if (body.contains("z_touch")) {
      const auto& z = body.at("z_touch");
      const auto oracle = rig->clearance_oracle();
      if (!oracle) throw Error(ErrorCode::state, "this rig has no clearance oracle; confirm contact manually");
      if (!store.anchor()) throw Error(ErrorCode::state, "set the die anchor before finding Z");
      const double found = find_z_touch(z.value("start_z", 20.0), z.value("step", 0.025),
                                        z.value("gap_threshold", 0.1), *oracle);
      auto anchor = *store.anchor();
      anchor.corner.z = rig->motion().limits().quantize(found);
      store.set_anchor(anchor);
    }
    store.save();
    Json j = store.to_json();
    std::lock_guard lock(snapshot_mutex);
    calibration_json = j;
    return j;
  }

  void shutdown() {
    {
      std::lock_guard lock(queue_mutex);
      if (stopping) return;
      stopping = true;
    }
    shutting_down = true;
    {
      std::lock_guard lock(campaigns_mutex);
      for (auto& [id, e] : campaigns) {
        std::lock_guard elock(e->mutex);
        if (e->campaign) e->campaign->cancel();
        e->cancel_requested = true;
        e->events.close();
      }
    }
    http.stop();
    queue_cv.notify_all();
  }

  ServerOptions options;
  std::unique_ptr<Rig> rig;
  httplib::Server http;
  int port = -1;
  std::thread listener;

  std::mutex queue_mutex;
  std::condition_variable queue_cv;
  std::deque<std::function<void()>> queue;
  bool stopping = false;
  std::atomic<bool> shutting_down{false};
  std::thread worker;

  std::atomic<bool> campaign_active{false};
  std::mutex snapshot_mutex;
  Snapshot snapshot;
  Json calibration_json;

  std::mutex campaigns_mutex;
  std::map<std::string, std::shared_ptr<CampaignEntry>> campaigns;
  std::uint64_t next_id = 1;

  std::mutex idempotency_mutex;
  std::map<std::string, std::pair<std::string, CampaignConfig>> idempotency;
};

ApiServer::ApiServer(ServerOptions options, std::unique_ptr<Rig> rig)
    : impl_(std::make_unique<Impl>(std::move(options), std::move(rig))) {}

ApiServer::~ApiServer() { stop(); }

int ApiServer::bind() {
  if (impl_->port >= 0) return impl_->port;
  const auto& o = impl_->options;
  if (o.port == 0) {
    impl_->port = impl_->http.bind_to_any_port(o.bind);
  } else {
    impl_->port = impl_->http.bind_to_port(o.bind, o.port) ? o.port : -1;
  }
  if (impl_->port < 0) throw Error(ErrorCode::io, fmt::format("cannot bind {}:{}", o.bind, o.port));
  return impl_->port;
}

void ApiServer::serve() {
  bind();
  impl_->http.listen_after_bind();
}

int ApiServer::start() {
  const int port = bind();
  impl_->listener = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

void ApiServer::stop() {
  if (!impl_) return;
  impl_->shutdown();
  if (impl_->listener.joinable()) impl_->listener.join();
}

}  // namespace emfi
