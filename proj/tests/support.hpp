#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>

#include <unistd.h>

#include "emfi/campaign.hpp"
#include "emfi/error.hpp"
#include "emfi/motion.hpp"
#include "emfi/rig.hpp"
#include "emfi/types.hpp"

namespace emfi::test {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("emfi-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Code of the emfi::Error thrown by `f`, or nullopt if it returns normally.
template <typename F>
std::optional<ErrorCode> error_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Binomial oracle, written from the definition rather than from any library
// distribution so it can cross-check the Wilson implementation.

inline double log_binom_pmf(std::uint64_t k, std::uint64_t n, double p) {
  if (p <= 0.0) return k == 0 ? 0.0 : -INFINITY;
  if (p >= 1.0) return k == n ? 0.0 : -INFINITY;
  const double dn = static_cast<double>(n);
  const double dk = static_cast<double>(k);
  return std::lgamma(dn + 1) - std::lgamma(dk + 1) - std::lgamma(dn - dk + 1) + dk * std::log(p) +
         (dn - dk) * std::log1p(-p);
}

/// P(X <= k) for X ~ Bin(n, p), summed term by term.
inline double binom_cdf(std::uint64_t k, std::uint64_t n, double p) {
  double s = 0.0;
  for (std::uint64_t i = 0; i <= k; ++i) s += std::exp(log_binom_pmf(i, n, p));
  return std::min(1.0, s);
}

/// Exact Clopper-Pearson interval by bisection on the binomial tails.
inline std::pair<double, double> clopper_pearson(std::uint64_t k, std::uint64_t n, double level) {
  const double alpha = 1.0 - level;
  const auto solve = [](auto f) {
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (f(mid) ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
  };
  // Lower bound: P(X >= k | p) = alpha/2. Upper bound: P(X <= k | p) = alpha/2.
  const double low = k == 0 ? 0.0 : solve([&](double p) { return 1.0 - binom_cdf(k - 1, n, p) >= alpha / 2; });
  const double high = k == n ? 1.0 : solve([&](double p) { return binom_cdf(k, n, p) <= alpha / 2; });
  return {low, high};
}

// ---------------------------------------------------------------------------
// Random domain values

/// Multiples of 1/1000 so that three-decimal wire formats are exact.
inline double milli(std::mt19937_64& g, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(g) / 1000.0;
}

/// Multiples of 1/1024 mm: sums and differences of these are exact in binary
/// floating point, so affine identities can be checked with ==.
inline double dyadic(std::mt19937_64& g, int lo_mm, int hi_mm) {
  return std::uniform_int_distribution<int>(lo_mm * 1024, hi_mm * 1024)(g) / 1024.0;
}

inline GCodeCommand random_command(std::mt19937_64& g) {
  const auto pos = [&] { return StagePosition{milli(g, -100000, 100000), milli(g, -100000, 100000), milli(g, -100000, 100000)}; };
  const int feed = std::uniform_int_distribution<int>(1, 60000)(g);
  switch (g() % 5) {
    case 0: return gcode::Home{};
    case 1: return gcode::MoveAbsolute{pos(), feed};
    case 2: return gcode::MoveRelative{pos(), feed};
    case 3: return gcode::ReportPosition{};
    default:
      return gcode::SetFanSpeed{std::uniform_int_distribution<int>(0, 3)(g), std::uniform_int_distribution<int>(0, 255)(g)};
  }
}

inline PayloadKind random_payload(std::mt19937_64& g) {
  switch (g() % 3) {
    case 0: return payload::CounterLoop{static_cast<std::uint32_t>(1 + g() % 5000)};
    case 1: return payload::SramPattern{static_cast<std::uint32_t>(g()), static_cast<std::uint32_t>(1 + g() % 256)};
    default: return payload::ArkVerify{};
  }
}

inline AttemptRecord random_record(std::mt19937_64& g, std::uint64_t seq) {
  AttemptRecord r;
  r.seq = seq;
  r.timestamp = VirtualClock::default_epoch() + Duration(static_cast<std::int64_t>(g() % 100'000'000'000ull));
  r.position = {milli(g, 0, 100000), milli(g, 0, 100000), milli(g, 0, 100000)};
  r.die = {std::uniform_real_distribution<double>(0, 22)(g), std::uniform_real_distribution<double>(0, 9)(g)};
  r.pulse.voltage = Volts(static_cast<double>(1 + g() % 500));
  r.pulse.width = Nanoseconds(static_cast<double>(15 + g() % 946));
  r.pulse.probe = {g() % 2 ? 1.0 : 4.0, g() % 2 ? Winding::CW : Winding::CCW};
  r.supply = {Volts(0.3 + 0.001 * static_cast<double>(g() % 1201)), Volts(0.3 + 0.001 * static_cast<double>(g() % 1201))};
  const auto delay = static_cast<std::int64_t>(g() % 3001);
  r.trigger = {WaitCycles(delay), WaitCycles(std::min<std::int64_t>(delay, static_cast<std::int64_t>(g() % 5)))};
  if (g() % 4) r.effective_delay = WaitCycles(delay);
  r.payload = random_payload(g);
  r.outcome = static_cast<AttemptOutcome>(g() % kOutcomeCount);
  static const char* outputs[] = {"COUNTER 1000 EXPECTED 1000", "SRAM FAULTS 1\nDIFF 3 0xA5A5A5A5 0xA5A5A5A4",
                                  "OFFCHIP BL EXEC", "", "quote \" backslash \\ tab \t utf8 \xc2\xb5"};
  r.output = outputs[g() % 5];
  if (g() % 5 == 0) r.device_error = "stage did not reach target";
  return r;
}

// ---------------------------------------------------------------------------
// Simulated campaigns

/// Single-blob model: one Gaussian spot of `effect`, suppressed entirely at
/// nominal V_SoC, with the given bypass windows.
inline FaultModel single_blob_model(DiePoint center, double sigma, double p_max,
                                    EffectKind effect = EffectKind::LoopFault,
                                    std::vector<BypassWindow> windows = {}) {
  FaultModel m;
  m.blobs = {{center, sigma, p_max, effect, {}}};
  m.bypass_windows = std::move(windows);
  return m;
}

inline std::unique_ptr<Rig> sim_rig(FaultModel model = FaultModel::reference_model()) {
  SimBenchConfig cfg;
  cfg.dut.model = std::move(model);
  return make_simulated_rig(cfg);
}

inline CampaignConfig grid_config(double width, double height, double pitch, std::uint32_t attempts,
                                  double v_soc, std::uint64_t seed = 1) {
  CampaignConfig c;
  c.name = "grid";
  c.payload = payload::CounterLoop{};
  c.grid = GridSpec{{0, 0, 0}, width, height, pitch, 0.0};
  c.attempts = attempts;
  c.supply.v_soc = Volts(v_soc);
  c.seed = seed;
  return c;
}

inline CampaignConfig fixed_config(DiePoint at, TriggerPlan plan, std::uint32_t attempts, double v_soc,
                                   std::uint64_t seed = 1) {
  CampaignConfig c;
  c.name = "attack";
  c.payload = payload::ArkVerify{};
  c.fixed = at;
  c.trigger = plan;
  c.attempts = attempts;
  c.supply.v_soc = Volts(v_soc);
  c.seed = seed;
  return c;
}

/// Runs `config` on a fresh simulated rig, appending to the log at `path` and
/// resuming from whatever it already holds. With `cancel_after`, the run is
/// cancelled once that many records exist.
inline void run_logged(const CampaignConfig& config, const FaultModel& model, const std::filesystem::path& path,
                       std::optional<std::uint64_t> cancel_after = std::nullopt) {
  auto rig = sim_rig(model);
  AttemptLog log(path);
  Campaign campaign(*rig, config, &log);
  if (!log.existing().empty()) campaign.resume(log.existing());
  if (cancel_after) {
    campaign.set_observer([&](const AttemptRecord& r) {
      if (r.seq + 1 >= *cancel_after) campaign.cancel();
    });
  }
  campaign.run();
}

/// Number of motion commands issued while the pulse generator was armed,
/// judged from the wire: an accepted or attempted ARM opens the span and a
/// DISARM closes it.
inline std::size_t motion_while_armed(const std::vector<TraceEntry>& trace) {
  bool armed = false;
  std::size_t violations = 0;
  for (const auto& e : trace) {
    if (e.device == Device::Pulse && e.line == "ARM") armed = true;
    if (e.device == Device::Pulse && e.line == "DISARM") armed = false;
    if (e.device == Device::Motion && armed) ++violations;
  }
  return violations;
}

}  // namespace emfi::test
