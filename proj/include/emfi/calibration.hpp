#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include "emfi/clock.hpp"
#include "emfi/motion.hpp"
#include "emfi/serialization.hpp"
#include "emfi/types.hpp"

namespace emfi {

struct PixelPoint {
  double u = 0.0;
  double v = 0.0;

  bool operator==(const PixelPoint&) const = default;
};

struct FrameSize {
  int width = 1920;
  int height = 1080;

  bool contains(PixelPoint p) const { return p.u >= 0 && p.v >= 0 && p.u < width && p.v < height; }
};

inline constexpr double kMaxProbeOffsetMm = 50.0;

/// Offset from the positioning-camera center to the probe-tip center, in stage
/// millimeters. Adding it to a camera-located point gives the stage target
/// that puts the probe over that point.
struct OffsetCalibration {
  double dx = 0.0;
  double dy = 0.0;
  double pixel_scale_um = 1.0;  // micrometers per calibration-camera pixel
  TimePoint timestamp{};
  std::string probe_id;
  double rotation_rad = 0.0;  // reserved; camera and stage axes are assumed aligned

  bool operator==(const OffsetCalibration&) const = default;
  void validate() const;
};

/// Both points are calibration-camera pixels. Throws range errors for points
/// outside the frame or a non-positive scale.
OffsetCalibration compute_probe_offset(PixelPoint probe_center, PixelPoint camera_center,
                                       double pixel_scale_um, FrameSize frame = {});

/// Inverse of compute_probe_offset: the probe-center pixel implied by `cal`.
PixelPoint probe_pixel(const OffsetCalibration& cal, PixelPoint camera_center);

/// Stage position of the die corner under the positioning camera, plus the
/// die extent.
struct DieAnchor {
  StagePosition corner;
  double width_mm = 0.0;
  double height_mm = 0.0;

  bool operator==(const DieAnchor&) const = default;
  void validate(const MotionLimits& limits) const;
};

/// anchor + die point + offset, z taken from the anchor. Throws a range error
/// for points outside the die unless `allow_outside` (border scans).
StagePosition die_to_stage(DiePoint p, const DieAnchor& anchor, const OffsetCalibration& cal,
                           bool allow_outside = false);
DiePoint stage_to_die(const StagePosition& s, const DieAnchor& anchor, const OffsetCalibration& cal);

/// Gap between probe tip and die at stage height z, as reported by the
/// simulated surface or confirmed by the operator.
using ClearanceOracle = std::function<double(double z)>;

/// Lowest z on the lattice start_z - k*step whose clearance is still at least
/// `gap_threshold`: a coarse descent followed by bisection. Throws not_found if
/// the travel floor is reached first and a range error if the start position
/// is already inside the threshold.
double find_z_touch(double start_z, double step, double gap_threshold, const ClearanceOracle& clearance,
                    double floor_z = 0.0);

void to_json(Json& j, const OffsetCalibration& c);
void from_json(const Json& j, OffsetCalibration& c);
void to_json(Json& j, const DieAnchor& a);
void from_json(const Json& j, DieAnchor& a);

/// Per-tip offsets and the die anchor, persisted as JSON in the workspace.
/// Changing the tip drops that tip's offset: it must be re-measured.
class CalibrationStore {
 public:
  CalibrationStore() = default;
  explicit CalibrationStore(std::string path);

  void load();
  void save() const;

  void set_offset(const OffsetCalibration& cal);
  std::optional<OffsetCalibration> offset(const std::string& probe_id) const;
  void set_anchor(const DieAnchor& anchor) { anchor_ = anchor; }
  const std::optional<DieAnchor>& anchor() const { return anchor_; }

  void change_tip(const ProbeTip& tip);
  const ProbeTip& active_tip() const { return tip_; }

  Json to_json() const;
  void from_json(const Json& j);

 private:
  std::string path_;
  ProbeTip tip_;
  std::map<std::string, OffsetCalibration> offsets_;
  std::optional<DieAnchor> anchor_;
};

}  // namespace emfi
