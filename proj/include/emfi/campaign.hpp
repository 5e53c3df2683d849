#pragma once

#include <array>
#include <atomic>
#include <functional>
#include <optional>
#include <vector>

#include "emfi/config.hpp"
#include "emfi/persistence.hpp"
#include "emfi/rig.hpp"

namespace emfi {

enum class CycleStep { Disarm, Move, Arm, Charge, PowerOn, AwaitSpi, Collect, Classify, PowerOff };

std::string_view to_string(CycleStep s);

inline constexpr std::array<CycleStep, 9> kCanonicalCycle{
    CycleStep::Disarm,  CycleStep::Move,     CycleStep::Arm,      CycleStep::Charge,   CycleStep::PowerOn,
    CycleStep::AwaitSpi, CycleStep::Collect, CycleStep::Classify, CycleStep::PowerOff,
};

struct PlannedAttempt {
  DiePoint die;
  StagePosition stage;
  TriggerPlan trigger;
};

struct CycleResult {
  AttemptRecord record;
  std::vector<CycleStep> steps;
};

/// Stage targets of a grid campaign: the die lattice mapped through the
/// anchor and probe offset, lifted by grid.z above the anchor's working
/// height and quantized to the stage step.
std::vector<PlannedAttempt> plan_attempts(const CampaignConfig& config, const DieAnchor& anchor,
                                          const OffsetCalibration& cal, const MotionLimits& limits);

/// Local fine grid of +-coarse_pitch around `center`, clipped to the die
/// unless `allow_outside`.
std::vector<DiePoint> refine_window(DiePoint center, double coarse_pitch, double pitch_fine,
                                    const DieAnchor& anchor, bool allow_outside);

struct CampaignProgress {
  std::uint64_t planned = 0;
  std::uint64_t completed = 0;
  bool cancelled = false;
  bool finished = false;
};

/// Runs one campaign on a rig. The campaign owns the rig for its lifetime;
/// cancellation is honoured between cycles only.
class Campaign {
 public:
  using Observer = std::function<void(const AttemptRecord&)>;

  Campaign(Rig& rig, CampaignConfig config, AttemptLog* log = nullptr);

  void set_observer(Observer observer) { observer_ = std::move(observer); }
  void cancel() { cancel_requested_ = true; }

  /// Continues after `prior`, the records of an interrupted run of the same
  /// configuration. Throws a state error if they are not a prefix of its plan.
  void resume(std::vector<AttemptRecord> prior);

  /// Executes the remaining plan and returns every record of the campaign.
  const std::vector<AttemptRecord>& run();

  ScanResult run_scan();
  SuccessStats run_attack();
  std::vector<DelayGroup> run_delay_sweep();

  /// Scans the fine window around `coarse_best` and returns the fine maximum,
  /// or `coarse_best` itself if the fine scan finds nothing.
  DiePoint refine_position(DiePoint coarse_best, double coarse_pitch, double pitch_fine);

  /// One attack cycle in canonical step order. Device errors are recorded in
  /// the returned record; configuration and safety errors propagate.
  CycleResult run_cycle(const PlannedAttempt& attempt, std::uint64_t seq);

  const std::vector<AttemptRecord>& records() const { return records_; }
  CampaignProgress progress() const;
  const CampaignConfig& config() const { return config_; }
  std::optional<DiePoint> refined() const { return refined_; }

 private:
  void prepare();
  void finish();
  void ensure_plan();
  void extend_with_refine_plan();
  std::vector<PlannedAttempt> plan_points(const std::vector<DiePoint>& points) const;
  void execute(std::size_t index);

  Rig& rig_;
  CampaignConfig config_;
  AttemptLog* log_;
  Observer observer_;
  std::atomic<bool> cancel_requested_{false};
  std::atomic<bool> finished_{false};
  std::atomic<std::uint64_t> completed_{0};
  std::atomic<std::uint64_t> planned_{0};

  DieAnchor anchor_;
  OffsetCalibration cal_;
  std::vector<PlannedAttempt> plan_;
  std::size_t coarse_count_ = 0;
  bool refine_planned_ = false;
  bool resumed_ = false;
  std::optional<DiePoint> refined_;
  std::optional<TriggerPlan> configured_trigger_;
  std::vector<AttemptRecord> records_;
};

}  // namespace emfi
