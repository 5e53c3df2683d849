// Command-line front end: HTTP server plus headless scan, attack, sweep and
// export runs.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "CLI11.hpp"

#include "emfi/campaign.hpp"
#include "emfi/error.hpp"
#include "emfi/persistence.hpp"
#include "emfi/rig.hpp"
#include "emfi/server.hpp"
#include "emfi/stats.hpp"

namespace fs = std::filesystem;
using namespace emfi;

namespace {

std::atomic<Campaign*> g_running{nullptr};
std::atomic<int> g_signal{0};

// Only async-signal-safe work here: an atomic flag store. Server shutdown
// runs on a watcher thread in serve().
void on_signal(int sig) {
  g_signal = sig;
  if (auto* c = g_running.load()) c->cancel();
}

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, fmt::format("cannot open '{}'", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str());
}

struct RunOptions {
  std::string config;
  std::string out;
};

int run(CampaignMode expected, const RunOptions& opts) {
  const fs::path config_path = opts.config;
  const Json doc = read_json_file(config_path);
  const auto config = parse_campaign_config(doc);
  if (config.mode() != expected) {
    throw Error(ErrorCode::validation,
                fmt::format("'{}' describes a {} campaign", config_path.string(), to_string(config.mode())));
  }
  const RigSpec spec = parse_rig_spec(doc.value("rig", Json::object()), config_path.parent_path().string());
  auto rig = make_rig(spec);

  const CampaignPaths paths{opts.out.empty() ? fs::path("campaigns") / config.name : fs::path(opts.out)};
  if (fs::exists(paths.config())) {
    if (load_campaign(paths.dir).config != config) {
      throw Error(ErrorCode::state, fmt::format("'{}' holds a different campaign", paths.dir.string()));
    }
  } else {
    write_config_snapshot(paths, config);
  }

  AttemptLog log(paths.log());
  if (log.truncated_bytes() > 0) {
    fmt::print(stderr, "dropped a torn final log line ({} bytes)\n", log.truncated_bytes());
  }
  Campaign campaign(*rig, config, &log);
  if (!log.existing().empty()) {
    fmt::print(stderr, "resuming after {} recorded attempts\n", log.existing().size());
    campaign.resume(log.existing());
  }
  campaign.set_observer([&](const AttemptRecord& r) {
    const auto p = campaign.progress();
    if ((r.seq + 1) % 1000 == 0 || p.completed == p.planned) {
      fmt::print(stderr, "{}/{} attempts\n", p.completed, p.planned);
    }
  });
  g_running = &campaign;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  campaign.run();
  g_running = nullptr;

  export_campaign(paths.dir);
  const auto loaded = load_campaign(paths.dir);
  switch (expected) {
    case CampaignMode::Grid: {
      fmt::print("{} positions, {} attempts\n", loaded.scan.cells.size(), loaded.scan.total_attempts());
      if (const auto* best = loaded.scan.argmax()) {
        fmt::print("most faults at die ({:.3f}, {:.3f}): {}/{}\n", best->die.x, best->die.y, best->stats.successes,
                   best->stats.attempts);
      } else {
        fmt::print("no faults\n");
      }
      if (campaign.refined()) fmt::print("refined position ({:.3f}, {:.3f})\n", campaign.refined()->x, campaign.refined()->y);
      break;
    }
    case CampaignMode::Fixed: {
      for (const auto& p : loaded.plans) {
        if (p.stats.attempts == 0) continue;
        const auto ci = wilson_interval(p.stats, 0.95);
        fmt::print("{}/{}: {} successes in {} attempts, 95% CI [{:.4f}, {:.4f}]\n", p.plan.delay.value(),
                   p.plan.window.value(), p.stats.successes, p.stats.attempts, ci.low, ci.high);
      }
      break;
    }
    case CampaignMode::Sweep: {
      const auto groups = group_delays(loaded.log.records, config.sweep->group_threshold);
      fmt::print("{} delay groups\n", groups.size());
      for (const auto& g : groups) {
        fmt::print("  median {} (delays {}..{}, {} successes)\n", g.median, g.lo, g.hi, g.successes);
      }
      break;
    }
  }
  auto shown = loaded.plans;
  if (expected == CampaignMode::Sweep) {
    // One row per delay is too long for a terminal; summary.txt has them all.
    std::erase_if(shown, [](const PlanStats& p) { return p.stats.successes == 0; });
  }
  fmt::print("{}", export_summary(shown));
  fmt::print("results in {}\n", paths.dir.string());
  return campaign.progress().cancelled ? 130 : 0;
}

/// Options given on the command line; they override the config file and the
/// environment.
struct ServeFlags {
  std::string config;
  std::optional<std::string> bind;
  std::optional<int> port;
  std::optional<std::string> workspace;
};

int serve(const ServeFlags& flags) {
  ServerOptions options;
  const std::string& config_file = flags.config;
  RigSpec spec;
  if (!config_file.empty()) {
    const fs::path path = config_file;
    const Json doc = read_json_file(path);
    spec = parse_rig_spec(doc.value("rig", Json::object()), path.parent_path().string());
    options.bind = doc.value("bind", options.bind);
    options.port = doc.value("port", options.port);
    if (doc.contains("workspace")) options.workspace = doc.at("workspace").get<std::string>();
  }
  apply_env_overrides(options);
  if (flags.bind) options.bind = *flags.bind;
  if (flags.port) options.port = *flags.port;
  if (flags.workspace) options.workspace = *flags.workspace;
  ApiServer server(options, make_rig(spec));
  const int port = server.bind();
  fmt::print(stderr, "listening on http://{}:{} (workspace {})\n", options.bind, port, options.workspace.string());
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::atomic<bool> served{false};
  std::thread watcher([&] {
    while (!served && g_signal == 0) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    if (g_signal != 0) server.stop();
  });
  server.serve();
  served = true;
  watcher.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EMFI campaign orchestration"};
  app.require_subcommand(1);

  ServeFlags serve_flags;
  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP control server");
  serve_cmd->add_option("--config", serve_flags.config, "Server config (rig, bind, port, workspace)");
  serve_cmd->add_option("--bind", serve_flags.bind, "Listen address (default 127.0.0.1)");
  serve_cmd->add_option("--port", serve_flags.port, "Listen port (default 8080, 0 picks a free port)");
  serve_cmd->add_option("--workspace", serve_flags.workspace, "Campaign workspace directory (default emfi-workspace)");

  RunOptions scan_opts, attack_opts, sweep_opts;
  const auto add_run = [&](const char* name, const char* help, RunOptions& o) {
    auto* cmd = app.add_subcommand(name, help);
    cmd->add_option("config", o.config, "Campaign config file")->required();
    cmd->add_option("-o,--out", o.out, "Campaign directory (default campaigns/<name>)");
    return cmd;
  };
  auto* scan_cmd = add_run("scan", "Grid scan of the die", scan_opts);
  auto* attack_cmd = add_run("attack", "Repeated attack at a fixed position and delay", attack_opts);
  auto* sweep_cmd = add_run("sweep", "Trigger delay brute force", sweep_opts);

  std::string export_dir;
  auto* export_cmd = app.add_subcommand("export", "Rewrite heatmap.csv and summary.txt of a campaign");
  export_cmd->add_option("campaign-dir", export_dir, "Campaign directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(serve_flags);
    if (*scan_cmd) return run(CampaignMode::Grid, scan_opts);
    if (*attack_cmd) return run(CampaignMode::Fixed, attack_opts);
    if (*sweep_cmd) return run(CampaignMode::Sweep, sweep_opts);
    if (*export_cmd) {
      export_campaign(export_dir);
      const auto c = load_campaign(export_dir);
      if (c.log.torn_bytes > 0) fmt::print(stderr, "ignored a torn final log line ({} bytes)\n", c.log.torn_bytes);
      fmt::print("{}", export_summary(c.plans));
      return 0;
    }
  } catch (const Error& e) {
    fmt::print(stderr, "error ({}): {}\n", to_string(e.code()), e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
