#include "emfi/campaign.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "emfi/error.hpp"
#include "emfi/grid.hpp"

namespace emfi {

std::string_view to_string(CycleStep s) {
  switch (s) {
    case CycleStep::Disarm: return "disarm";
    case CycleStep::Move: return "move";
    case CycleStep::Arm: return "arm";
    case CycleStep::Charge: return "charge";
    case CycleStep::PowerOn: return "power_on";
    case CycleStep::AwaitSpi: return "await_spi";
    case CycleStep::Collect: return "collect";
    case CycleStep::Classify: return "classify";
    case CycleStep::PowerOff: return "power_off";
  }
  return "disarm";
}

namespace {

StagePosition stage_target(DiePoint p, const DieAnchor& anchor, const OffsetCalibration& cal,
                           const MotionLimits& limits, double lift, bool allow_outside) {
  StagePosition s = die_to_stage(p, anchor, cal, allow_outside);
  s.z += lift;
  s = limits.quantize(s);
  if (!limits.within(s)) {
    throw Error(ErrorCode::limit, fmt::format("die point ({}, {}) maps outside the stage travel", p.x, p.y));
  }
  return s;
}

// Device trouble is recorded against the attempt; anything else means the
// campaign itself is misconfigured or unsafe and must stop.
bool recoverable(ErrorCode code) {
  return code == ErrorCode::device || code == ErrorCode::timeout || code == ErrorCode::state ||
         code == ErrorCode::parse;
}

}  // namespace

std::vector<PlannedAttempt> plan_attempts(const CampaignConfig& config, const DieAnchor& anchor,
                                          const OffsetCalibration& cal, const MotionLimits& limits) {
  config.validate();
  std::vector<PlannedAttempt> plan;
  switch (config.mode()) {
    case CampaignMode::Grid: {
      const auto& g = *config.grid;
      GridSpec die_grid{{g.origin.x, g.origin.y, 0.0}, g.width, g.height, g.pitch, 0.0};
      const auto lattice = generate_grid(die_grid);
      plan.reserve(lattice.size() * config.attempts);
      for (const auto& p : lattice) {
        const DiePoint die{p.x, p.y};
        const auto stage = stage_target(die, anchor, cal, limits, g.z, config.allow_outside_die);
        for (std::uint32_t a = 0; a < config.attempts; ++a) plan.push_back({die, stage, config.trigger});
      }
      break;
    }
    case CampaignMode::Fixed: {
      const auto stage = stage_target(*config.fixed, anchor, cal, limits, 0.0, config.allow_outside_die);
      plan.assign(config.attempts, PlannedAttempt{*config.fixed, stage, config.trigger});
      break;
    }
    case CampaignMode::Sweep: {
      const auto& s = *config.sweep;
      const auto stage = stage_target(s.position, anchor, cal, limits, 0.0, config.allow_outside_die);
      for (std::int64_t d = s.lo; d <= s.hi; d += s.step) {
        const TriggerPlan trig{WaitCycles(d), WaitCycles(s.window)};
        for (std::uint32_t a = 0; a < s.attempts_per_delay; ++a) plan.push_back({s.position, stage, trig});
      }
      break;
    }
  }
  return plan;
}

std::vector<DiePoint> refine_window(DiePoint center, double coarse_pitch, double pitch_fine,
                                    const DieAnchor& anchor, bool allow_outside) {
  if (!(pitch_fine > 0.0) || pitch_fine >= coarse_pitch) {
    throw Error(ErrorCode::validation, "fine pitch must be positive and below the coarse pitch");
  }
  double x0 = center.x - coarse_pitch;
  double y0 = center.y - coarse_pitch;
  double x1 = center.x + coarse_pitch;
  double y1 = center.y + coarse_pitch;
  if (!allow_outside) {
    x0 = std::max(x0, 0.0);
    y0 = std::max(y0, 0.0);
    x1 = std::min(x1, anchor.width_mm);
    y1 = std::min(y1, anchor.height_mm);
  }
  std::vector<DiePoint> points;
  for (const auto& p : generate_grid({{x0, y0, 0.0}, x1 - x0, y1 - y0, pitch_fine, 0.0})) {
    points.push_back({p.x, p.y});
  }
  return points;
}

Campaign::Campaign(Rig& rig, CampaignConfig config, AttemptLog* log)
    : rig_(rig), config_(std::move(config)), log_(log) {
  config_.validate();
  auto& store = rig_.calibration();
  if (store.active_tip() != config_.pulse.probe) {
    throw Error(ErrorCode::state, fmt::format("campaign uses tip {} but tip {} is mounted", config_.pulse.probe.id(),
                                              store.active_tip().id()));
  }
  const auto cal = store.offset(config_.pulse.probe.id());
  if (!cal) throw Error(ErrorCode::state, fmt::format("no probe offset calibration for tip {}", config_.pulse.probe.id()));
  if (!store.anchor()) throw Error(ErrorCode::state, "no die anchor calibrated");
  cal_ = *cal;
  anchor_ = *store.anchor();
  plan_ = plan_attempts(config_, anchor_, cal_, rig_.motion().limits());
  coarse_count_ = plan_.size();
  planned_ = plan_.size();
}

std::vector<PlannedAttempt> Campaign::plan_points(const std::vector<DiePoint>& points) const {
  std::vector<PlannedAttempt> out;
  const double lift = config_.grid ? config_.grid->z : 0.0;
  for (const auto& p : points) {
    const auto stage = stage_target(p, anchor_, cal_, rig_.motion().limits(), lift, config_.allow_outside_die);
    for (std::uint32_t a = 0; a < config_.attempts; ++a) out.push_back({p, stage, config_.trigger});
  }
  return out;
}

void Campaign::extend_with_refine_plan() {
  refine_planned_ = true;
  const std::vector<AttemptRecord> coarse(records_.begin(), records_.begin() + coarse_count_);
  const auto result = scan_result_from_records(coarse, config_.count_error_attempts);
  const auto* best = result.argmax();
  if (!best) return;
  refined_ = best->die;
  const auto points = refine_window(best->die, config_.grid->pitch, *config_.refine_pitch, anchor_,
                                    config_.allow_outside_die);
  const auto extra = plan_points(points);
  plan_.insert(plan_.end(), extra.begin(), extra.end());
  planned_ = plan_.size();
}

void Campaign::ensure_plan() {
  if (config_.refine_pitch && !refine_planned_ && records_.size() >= coarse_count_) extend_with_refine_plan();
}

void Campaign::resume(std::vector<AttemptRecord> prior) {
  if (!records_.empty()) throw Error(ErrorCode::state, "campaign already started");
  const auto check = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto& r = prior[i];
      if (i >= plan_.size() || r.seq != i || r.die != plan_[i].die || r.trigger != plan_[i].trigger) {
        throw Error(ErrorCode::state, fmt::format("attempt log diverges from the campaign plan at line {}", i + 1));
      }
    }
  };
  check(0, std::min(prior.size(), coarse_count_));
  if (prior.size() > coarse_count_) {
    // The refine plan depends on the coarse records, so rebuild it first.
    records_.assign(prior.begin(), prior.begin() + static_cast<std::ptrdiff_t>(coarse_count_));
    ensure_plan();
    check(coarse_count_, prior.size());
  }
  records_ = std::move(prior);
  resumed_ = !records_.empty();
  completed_ = records_.size();
}

void Campaign::prepare() {
  auto& pulse = rig_.pulse();
  auto& trig = rig_.trigger();
  pulse.disarm();
  trig.power_off();
  rig_.motion().home();
  pulse.set_config(config_.pulse);
  rig_.flash().select_payload(config_.payload);
  trig.set_supply({Rail::Soc, config_.supply.v_soc});
  trig.set_supply({Rail::Core, config_.supply.v_core});
  configured_trigger_.reset();
  if (resumed_) {
    resumed_ = false;
    // Continue on the original timeline from where the last attempt ended.
    const auto& last = records_.back();
    rig_.motion().move_to(last.position, MmPerSecond(config_.feed_mm_s));
    rig_.clock().resync(last.timestamp);
  }
}

void Campaign::finish() {
  try {
    rig_.pulse().disarm();
  } catch (const Error&) {
  }
  try {
    rig_.trigger().power_off();
  } catch (const Error&) {
  }
  finished_ = true;
}

CycleResult Campaign::run_cycle(const PlannedAttempt& attempt, std::uint64_t seq) {
  rig_.reseed(config_.seed, seq);
  CycleResult result;
  AttemptRecord& r = result.record;
  r.seq = seq;
  r.position = attempt.stage;
  r.die = attempt.die;
  r.pulse = config_.pulse;
  r.supply = config_.supply;
  r.trigger = attempt.trigger;
  r.payload = config_.payload;
  const auto step = [&](CycleStep s) { result.steps.push_back(s); };

  auto& pulse = rig_.pulse();
  auto& trig = rig_.trigger();
  try {
    if (configured_trigger_ != attempt.trigger) {
      trig.configure_trigger(attempt.trigger);
      configured_trigger_ = attempt.trigger;
    }
    step(CycleStep::Disarm);
    pulse.disarm();
    step(CycleStep::Move);
    rig_.motion().move_to(attempt.stage, MmPerSecond(config_.feed_mm_s));
    step(CycleStep::Arm);
    pulse.arm();
    step(CycleStep::Charge);
    pulse.charge();
    pulse.wait_ready(config_.timeouts.charge);
    step(CycleStep::PowerOn);
    trig.power_on();
    step(CycleStep::AwaitSpi);
    const auto event = trig.poll_spi_event(config_.timeouts.spi);
    if (event) {
      r.effective_delay = event->effective_delay;
      if (!event->pulse_fired) r.device_error = "pulse generator did not fire on the trigger edge";
    }
    step(CycleStep::Collect);
    r.output = rig_.console().collect_output(config_.timeouts.output);
    step(CycleStep::Classify);
    r.outcome = event ? classify_response(r.output, config_.payload, rig_.console().target_powered())
                      : AttemptOutcome::BootFailure;
    step(CycleStep::PowerOff);
    trig.power_off();
  } catch (const Error& e) {
    if (!recoverable(e.code())) throw;
    configured_trigger_.reset();
    r.device_error = e.what();
    r.outcome = e.code() == ErrorCode::timeout ? AttemptOutcome::Timeout : AttemptOutcome::Crash;
    try {
      pulse.disarm();
    } catch (const Error&) {
    }
    step(CycleStep::PowerOff);
    try {
      trig.power_off();
    } catch (const Error&) {
    }
  }
  r.timestamp = rig_.clock().now();
  return result;
}

void Campaign::execute(std::size_t index) {
  auto result = run_cycle(plan_[index], index);
  if (log_) log_->append(result.record);
  records_.push_back(std::move(result.record));
  completed_ = records_.size();
  if (observer_) observer_(records_.back());
}

const std::vector<AttemptRecord>& Campaign::run() {
  ensure_plan();
  if (records_.size() < plan_.size() && !cancel_requested_) {
    prepare();
    while (!cancel_requested_) {
      ensure_plan();
      if (records_.size() >= plan_.size()) break;
      execute(records_.size());
    }
  }
  if (config_.refine_pitch && refined_ && records_.size() == plan_.size()) {
    const std::vector<AttemptRecord> fine(records_.begin() + coarse_count_, records_.end());
    if (const auto* best = scan_result_from_records(fine, config_.count_error_attempts).argmax()) {
      refined_ = best->die;
    }
  }
  finish();
  return records_;
}

ScanResult Campaign::run_scan() {
  if (config_.mode() != CampaignMode::Grid) throw Error(ErrorCode::validation, "not a grid campaign");
  return scan_result_from_records(run(), config_.count_error_attempts);
}

SuccessStats Campaign::run_attack() {
  if (config_.mode() != CampaignMode::Fixed) throw Error(ErrorCode::validation, "not a fixed-position campaign");
  SuccessStats stats;
  for (const auto& r : run()) {
    if (!counts_as_attempt(r, config_.count_error_attempts)) continue;
    ++stats.attempts;
    if (is_success(r.outcome)) ++stats.successes;
  }
  return stats;
}

std::vector<DelayGroup> Campaign::run_delay_sweep() {
  if (config_.mode() != CampaignMode::Sweep) throw Error(ErrorCode::validation, "not a sweep campaign");
  return group_delays(run(), config_.sweep->group_threshold);
}

DiePoint Campaign::refine_position(DiePoint coarse_best, double coarse_pitch, double pitch_fine) {
  const auto points = refine_window(coarse_best, coarse_pitch, pitch_fine, anchor_, config_.allow_outside_die);
  const auto extra = plan_points(points);
  const std::size_t first = records_.size();
  plan_.resize(first);
  plan_.insert(plan_.end(), extra.begin(), extra.end());
  planned_ = plan_.size();
  prepare();
  for (std::size_t i = first; i < plan_.size() && !cancel_requested_; ++i) execute(i);
  finish();
  const std::vector<AttemptRecord> fine(records_.begin() + static_cast<std::ptrdiff_t>(first), records_.end());
  const auto* best = scan_result_from_records(fine, config_.count_error_attempts).argmax();
  return best ? best->die : coarse_best;
}

CampaignProgress Campaign::progress() const {
  return {planned_.load(), completed_.load(), cancel_requested_.load(), finished_.load()};
}

}  // namespace emfi
