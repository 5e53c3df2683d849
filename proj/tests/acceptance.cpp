// Acceptance criteria, one PASS/FAIL line each. With no argument every
// criterion runs; otherwise only the named ones.

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include "emfi/calibration.hpp"
#include "emfi/persistence.hpp"
#include "emfi/serialization.hpp"
#include "emfi/stats.hpp"
#include "support.hpp"

using namespace emfi;
using namespace emfi::test;
using namespace std::chrono_literals;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

/// Wilson score interval from its definition.
std::pair<double, double> wilson(std::uint64_t k, std::uint64_t n, double level) {
  const double z = boost::math::quantile(boost::math::normal(), 0.5 + level / 2);
  const double nn = static_cast<double>(n), p = static_cast<double>(k) / nn;
  const double centre = (p + z * z / (2 * nn)) / (1 + z * z / nn);
  const double half = z / (1 + z * z / nn) * std::sqrt(p * (1 - p) / nn + z * z / (4 * nn * nn));
  return {centre - half, centre + half};
}

bool is_fault(AttemptOutcome o) {
  return o == AttemptOutcome::PayloadFault || o == AttemptOutcome::Crash || o == AttemptOutcome::BypassSuccess;
}

Verdict localization() {
  int hits = 0;
  double slowest = 0.0;
  std::string misses;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    std::mt19937_64 g(seed * 7919);
    const DiePoint plant{std::uniform_real_distribution<double>(1, 21)(g),
                         std::uniform_real_distribution<double>(1, 8)(g)};
    FaultModel model;
    model.blobs = {{plant, 0.7, 0.30, EffectKind::LoopFault, {}}};
    model.seed = seed;
    auto rig = sim_rig(model);
    Campaign c(*rig, grid_config(22, 9, 1, 100, 0.59, seed));
    const auto t0 = std::chrono::steady_clock::now();
    const auto scan = c.run_scan();
    slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    const auto* best = scan.argmax();
    const bool hit = best && std::hypot(best->die.x - plant.x, best->die.y - plant.y) <= 1.0;
    hits += hit;
    if (!hit) misses += fmt::format(" seed{}", seed);
  }
  return {hits >= 19 && slowest < 60.0,
          fmt::format("{}/20 argmax within 1 pitch (need 19), slowest scan {:.2f} s (limit 60 s){}", hits, slowest,
                      misses.empty() ? "" : "; missed" + misses)};
}

Verdict vsoc_contrast() {
  const auto faults = [](double v_soc) {
    auto rig = sim_rig(FaultModel::reference_model());
    Campaign c(*rig, grid_config(22, 9, 1, 20, v_soc, 11));
    std::uint64_t n = 0;
    for (const auto& r : c.run()) n += is_fault(r.outcome);
    return n;
  };
  const auto nominal = faults(0.90), lowered = faults(0.59);
  return {nominal == 0 && lowered > 0,
          fmt::format("fault outcomes at 0.90 V: {} (need 0), at 0.59 V: {} (need > 0)", nominal, lowered)};
}

Verdict boot_threshold() {
  const auto outcomes = [](double v_soc, std::uint32_t n) {
    auto rig = sim_rig(FaultModel{});
    Campaign c(*rig, fixed_config({11, 4.5}, {WaitCycles(2364), WaitCycles(4)}, n, v_soc, 3));
    std::map<AttemptOutcome, std::uint64_t> h;
    for (const auto& r : c.run()) ++h[r.outcome];
    return h;
  };
  const auto low = outcomes(0.55, 1);
  const auto ok = outcomes(0.59, 1000);
  const auto booted = 1000 - (ok.count(AttemptOutcome::BootFailure) ? ok.at(AttemptOutcome::BootFailure) : 0);
  const bool low_fails = low.size() == 1 && low.begin()->first == AttemptOutcome::BootFailure;
  return {low_fails && booted == 1000,
          fmt::format("0.55 V -> {}; 0.59 V booted {}/1000", to_string(low.begin()->first), booted)};
}

Verdict sweep_recovery() {
  const std::vector<std::int64_t> plants{128, 2364, 2384, 2391};
  FaultModel model;
  model.blobs = {{{14.5, 3.5}, 0.7, 0.5, EffectKind::ArkBypass, {}}};
  for (const auto d : plants) model.bypass_windows.push_back({d, 1, 1.0});
  auto rig = sim_rig(model);
  CampaignConfig cfg;
  cfg.name = "sweep";
  cfg.payload = payload::ArkVerify{};
  cfg.sweep = DelaySweep{{14.5, 3.5}, 0, 3000, 1, 0, 20, 4};
  cfg.supply.v_soc = Volts(0.59);
  cfg.seed = 17;
  Campaign c(*rig, cfg);
  const auto groups = c.run_delay_sweep();
  std::string medians;
  bool close = groups.size() == plants.size();
  for (std::size_t i = 0; i < groups.size(); ++i) {
    medians += fmt::format("{}{}", i ? "," : "", groups[i].median);
    if (close) close = std::abs(groups[i].median - plants[i]) <= 2;
  }
  return {close, fmt::format("{} groups (need 4), medians [{}] vs plants [128,2364,2384,2391] (tolerance 2)",
                             groups.size(), medians)};
}

Verdict estimator() {
  int covered = 0;
  std::string rates;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto model = FaultModel::reference_model();
    model.seed = seed;
    auto rig = sim_rig(model);
    Campaign c(*rig, fixed_config({14.5, 3.5}, {WaitCycles(2364), WaitCycles(4)}, 10000, 0.59, seed));
    const auto s = c.run_attack();
    const auto [lo, hi] = wilson(s.successes, s.attempts, 0.99);
    covered += lo <= 0.2206 && 0.2206 <= hi;
    rates += fmt::format("{}{}", seed > 1 ? " " : "", s.successes);
  }
  return {covered >= 19, fmt::format("99% Wilson interval contains 0.2206 in {}/20 seeds (need 19); successes of "
                                     "10000: {}",
                                     covered, rates)};
}

Verdict duration() {
  const double hours = estimate_campaign_duration(230, 100, 3.9s).count() / 3600.0;
  auto rig = sim_rig();
  Campaign c(*rig, fixed_config({14.5, 3.5}, {WaitCycles(2364), WaitCycles(4)}, 1, 0.59));
  const auto plan = plan_attempts(c.config(), *rig->calibration().anchor(),
                                  *rig->calibration().offset(c.config().pulse.probe.id()), rig->motion().limits());
  rig->motion().home();
  rig->motion().move_to(plan[0].stage, MmPerSecond(10));
  const TimePoint t0 = rig->clock().now();
  c.run_cycle(plan[0], 0);
  const double cycle = std::chrono::duration<double>(rig->clock().now() - t0).count();
  return {hours >= 21.25 && hours <= 28.75 && cycle < 4.0,
          fmt::format("230 x 100 x 3.9 s = {:.2f} h (range 21.25..28.75 h); one cycle {:.3f} s virtual (limit 4 s)",
                      hours, cycle)};
}

Verdict interlock() {
  std::mt19937_64 g(31337);
  std::size_t violations = 0, commands = 0, arms = 0;
  for (int i = 0; i < 10000; ++i) {
    auto rig = sim_rig();
    CampaignConfig cfg;
    switch (g() % 3) {
      case 0:
        cfg = grid_config(static_cast<double>(g() % 3), static_cast<double>(g() % 2), 1,
                          static_cast<std::uint32_t>(1 + g() % 3), 0.5 + 0.01 * static_cast<double>(g() % 45), g());
        break;
      case 1:
        cfg = fixed_config({milli(g, 0, 22000), milli(g, 0, 9000)}, {WaitCycles(2364), WaitCycles(4)},
                           static_cast<std::uint32_t>(1 + g() % 4), 0.5 + 0.01 * static_cast<double>(g() % 45), g());
        break;
      default: {
        const auto lo = static_cast<std::int64_t>(g() % 2990);
        cfg = fixed_config({14.5, 3.5}, {}, 1, 0.59, g());
        cfg.fixed.reset();
        cfg.sweep = DelaySweep{{14.5, 3.5}, lo, lo + static_cast<std::int64_t>(g() % 4), 1, 0, 1, 4};
      }
    }
    Campaign c(*rig, cfg);
    const auto drop_at = g() % 6;
    const int drops = static_cast<int>(g() % 3);
    const auto cancel_at = g() % 8;
    c.set_observer([&](const AttemptRecord& r) {
      if (r.seq == drop_at) rig->sim()->marlin.drop_responses(drops);
      if (r.seq == cancel_at) c.cancel();
    });
    c.run();
    const auto trace = rig->trace().snapshot();
    violations += motion_while_armed(trace);
    commands += trace.size();
    arms += std::count_if(trace.begin(), trace.end(),
                          [](const TraceEntry& e) { return e.device == Device::Pulse && e.line == "ARM"; });
  }
  // The oracle must flag a hand-made violation.
  const bool oracle_live =
      motion_while_armed({{Device::Pulse, "ARM"}, {Device::Motion, "G1 X1.000 Y1.000 Z1.000 F600"}}) == 1;
  return {violations == 0 && arms > 0 && oracle_live,
          fmt::format("10000 campaigns, {} device commands, {} ARMs, {} motion commands while armed (need 0)",
                      commands, arms, violations)};
}

Verdict round_trips() {
  std::mt19937_64 g(4242);
  int gcode_ok = 0, log_ok = 0, anti_ok = 0, affine_ok = 0;

  for (int i = 0; i < 1000; ++i) {
    const auto cmd = random_command(g);
    gcode_ok += decode(encode(cmd)) == cmd;
  }

  TempDir dir;
  std::vector<AttemptRecord> written;
  {
    AttemptLog log(dir / "rt.jsonl");
    for (std::uint64_t i = 0; i < 1000; ++i) {
      written.push_back(random_record(g, i));
      log.append(written.back());
    }
  }
  const auto back = read_attempt_log(dir / "rt.jsonl").records;
  for (std::size_t i = 0; i < written.size(); ++i) log_ok += i < back.size() && back[i] == written[i];

  std::uniform_real_distribution<double> u(0, 1919.999), v(0, 1079.999), s(0.5, 20);
  for (int n = 0; n < 1000;) {
    const PixelPoint a{u(g), v(g)}, b{u(g), v(g)};
    const double scale = s(g);
    if (std::hypot(a.u - b.u, a.v - b.v) * scale / 1000 >= kMaxProbeOffsetMm) continue;
    const auto ab = compute_probe_offset(a, b, scale), ba = compute_probe_offset(b, a, scale);
    anti_ok += ab.dx == -ba.dx && ab.dy == -ba.dy;
    ++n;
  }

  for (int i = 0; i < 1000; ++i) {
    const DieAnchor anchor{{dyadic(g, 0, 60), dyadic(g, 0, 60), dyadic(g, 0, 40)}, dyadic(g, 1, 30), dyadic(g, 1, 30)};
    OffsetCalibration cal;
    cal.dx = dyadic(g, -10, 10);
    cal.dy = dyadic(g, -10, 10);
    cal.probe_id = "4mm-CW";
    const auto inside = [&](double extent) {
      return std::floor(std::uniform_real_distribution<double>(0, extent)(g) * 1024) / 1024;
    };
    const DiePoint a{inside(anchor.width_mm), inside(anchor.height_mm)};
    const DiePoint b{inside(anchor.width_mm), inside(anchor.height_mm)};
    const auto sa = die_to_stage(a, anchor, cal), sb = die_to_stage(b, anchor, cal);
    affine_ok += sa.x - sb.x == a.x - b.x && sa.y - sb.y == a.y - b.y && sa.z == anchor.corner.z &&
                 sb.z == anchor.corner.z;
  }

  return {gcode_ok == 1000 && log_ok == 1000 && anti_ok == 1000 && affine_ok == 1000,
          fmt::format("exact matches of 1000: G-code {}, attempt log {}, offset antisymmetry {}, die affine {}",
                      gcode_ok, log_ok, anti_ok, affine_ok)};
}

Verdict resume() {
  const auto model = single_blob_model({3, 2}, 0.7, 0.4);
  const auto cfg = grid_config(6, 4, 1, 4, 0.59, 77);
  TempDir dir;
  run_logged(cfg, model, dir / "full.jsonl");
  const auto full = read_file(dir / "full.jsonl");
  const auto total = read_attempt_log(dir / "full.jsonl").records.size();
  std::mt19937_64 g(2024);
  int identical = 0;
  std::string cuts;
  for (int trial = 0; trial < 10; ++trial) {
    const auto path = dir / fmt::format("cut{}.jsonl", trial);
    const auto cut = 1 + g() % (total - 1);
    run_logged(cfg, model, path, cut);
    if (trial % 2) std::ofstream(path, std::ios::app) << R"({"v":2,"seq":)" << cut;
    run_logged(cfg, model, path);
    identical += read_file(path) == full;
    cuts += fmt::format("{}{}", trial ? "," : "", cut);
  }
  return {identical == 10, fmt::format("{}/10 resumed logs byte-identical to the {}-record uninterrupted run "
                                       "(cuts {}; odd trials add a torn line)",
                                       identical, total, cuts)};
}

Verdict summary_fixture() {
  TempDir dir;
  const CampaignPaths paths{dir / "attack"};
  write_config_snapshot(paths, fixed_config({14.5, 3.5}, {WaitCycles(2364), WaitCycles(4)}, 10000, 0.59));
  std::mt19937_64 g(5);
  std::vector<AttemptRecord> records;
  for (std::uint64_t i = 0; i < 10000; ++i) {
    AttemptRecord r = random_record(g, i);
    r.trigger = {WaitCycles(2364), WaitCycles(4)};
    r.payload = payload::ArkVerify{};
    r.device_error.clear();
    r.outcome = i < 2206 ? AttemptOutcome::BypassSuccess : AttemptOutcome::NoEffect;
    records.push_back(r);
  }
  std::shuffle(records.begin(), records.end(), g);
  {
    AttemptLog log(paths.log());
    for (std::uint64_t i = 0; i < records.size(); ++i) {
      records[i].seq = i;
      log.append(records[i]);
    }
  }
  export_campaign(paths.dir);
  const auto text = read_file(paths.summary());
  const std::string row = "2364/4 | 2206/10000 | 22.06%";
  const bool found = text.find("\n" + row + "\n") != std::string::npos;
  const auto nl = text.find('\n');
  return {found, fmt::format("summary row: \"{}\"", text.substr(nl + 1, text.find('\n', nl + 1) - nl - 1))};
}

const std::vector<std::pair<std::string, std::function<Verdict()>>> kCriteria = {
    {"localization", localization},   {"vsoc_contrast", vsoc_contrast}, {"boot_threshold", boot_threshold},
    {"sweep_recovery", sweep_recovery}, {"estimator", estimator},       {"duration", duration},
    {"interlock", interlock},         {"round_trips", round_trips},     {"resume", resume},
    {"summary_fixture", summary_fixture},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> wanted(argv + 1, argv + argc);
  int failures = 0, run = 0;
  for (const auto& [name, check] : kCriteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
    ++run;
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, fmt::format("exception: {}", e.what())};
    }
    failures += !v.pass;
    fmt::print("{} {}: {}\n", v.pass ? "PASS" : "FAIL", name, v.detail);
    std::fflush(stdout);
  }
  if (run == 0) {
    fmt::print(stderr, "unknown criterion\n");
    return 2;
  }
  return failures == 0 ? 0 : 1;
}
