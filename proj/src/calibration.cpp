#include "emfi/calibration.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

void OffsetCalibration::validate() const {
  if (!(pixel_scale_um > 0.0)) throw Error(ErrorCode::range, "pixel scale must be > 0");
  if (!std::isfinite(dx) || !std::isfinite(dy) || std::hypot(dx, dy) >= kMaxProbeOffsetMm) {
    throw Error(ErrorCode::range, fmt::format("probe offset ({}, {}) mm is implausible", dx, dy));
  }
}

OffsetCalibration compute_probe_offset(PixelPoint probe_center, PixelPoint camera_center,
                                       double pixel_scale_um, FrameSize frame) {
  if (!(pixel_scale_um > 0.0)) throw Error(ErrorCode::range, "pixel scale must be > 0");
  for (const auto& p : {probe_center, camera_center}) {
    if (!frame.contains(p)) {
      throw Error(ErrorCode::range, fmt::format("pixel ({}, {}) outside the {}x{} frame", p.u, p.v,
                                                frame.width, frame.height));
    }
  }
  OffsetCalibration cal;
  cal.dx = (probe_center.u - camera_center.u) * pixel_scale_um / 1000.0;
  cal.dy = (probe_center.v - camera_center.v) * pixel_scale_um / 1000.0;
  cal.pixel_scale_um = pixel_scale_um;
  cal.validate();
  return cal;
}

PixelPoint probe_pixel(const OffsetCalibration& cal, PixelPoint camera_center) {
  return {camera_center.u + cal.dx * 1000.0 / cal.pixel_scale_um,
          camera_center.v + cal.dy * 1000.0 / cal.pixel_scale_um};
}

void DieAnchor::validate(const MotionLimits& limits) const {
  if (!corner.is_finite()) throw Error(ErrorCode::validation, "die anchor must be finite");
  if (!(width_mm > 0.0) || !(height_mm > 0.0)) throw Error(ErrorCode::validation, "die extent must be > 0");
  const StagePosition far{corner.x + width_mm, corner.y + height_mm, corner.z};
  if (!limits.within(corner) || !limits.within(far)) {
    throw Error(ErrorCode::limit, "die anchor places the die outside the stage travel");
  }
}

StagePosition die_to_stage(DiePoint p, const DieAnchor& anchor, const OffsetCalibration& cal,
                           bool allow_outside) {
  constexpr double eps = 1e-9;
  if (!allow_outside &&
      (p.x < -eps || p.y < -eps || p.x > anchor.width_mm + eps || p.y > anchor.height_mm + eps)) {
    throw Error(ErrorCode::range, fmt::format("die point ({}, {}) outside the {} x {} mm die", p.x, p.y,
                                              anchor.width_mm, anchor.height_mm));
  }
  return {anchor.corner.x + p.x + cal.dx, anchor.corner.y + p.y + cal.dy, anchor.corner.z};
}

DiePoint stage_to_die(const StagePosition& s, const DieAnchor& anchor, const OffsetCalibration& cal) {
  return {s.x - anchor.corner.x - cal.dx, s.y - anchor.corner.y - cal.dy};
}

double find_z_touch(double start_z, double step, double gap_threshold, const ClearanceOracle& clearance,
                    double floor_z) {
  if (!(step > 0.0)) throw Error(ErrorCode::validation, "z step must be > 0");
  if (!(gap_threshold >= 0.0)) throw Error(ErrorCode::validation, "gap threshold must be >= 0");
  if (clearance(start_z) < gap_threshold) {
    throw Error(ErrorCode::range, fmt::format("clearance at start z {} is already below {}", start_z,
                                              gap_threshold));
  }
  const auto z_at = [&](std::int64_t k) { return start_z - static_cast<double>(k) * step; };
  const auto max_k = static_cast<std::int64_t>(std::floor((start_z - floor_z) / step + 1e-9));

  // Coarse descent: lattice index `good` is known clear, `bad` is inside the threshold.
  constexpr std::int64_t stride = 16;
  std::int64_t good = 0;
  std::int64_t bad = -1;
  while (bad < 0) {
    const std::int64_t next = std::min(good + stride, max_k);
    if (next == good) {
      throw Error(ErrorCode::not_found, fmt::format("no contact found above z = {}", floor_z));
    }
    if (clearance(z_at(next)) >= gap_threshold) {
      good = next;
    } else {
      bad = next;
    }
  }
  while (bad - good > 1) {
    const std::int64_t mid = good + (bad - good) / 2;
    if (clearance(z_at(mid)) >= gap_threshold) {
      good = mid;
    } else {
      bad = mid;
    }
  }
  return z_at(good);
}

void to_json(Json& j, const OffsetCalibration& c) {
  j = Json{{"dx", c.dx},
           {"dy", c.dy},
           {"pixel_scale_um", c.pixel_scale_um},
           {"timestamp", format_iso8601(c.timestamp)},
           {"probe_id", c.probe_id},
           {"rotation_rad", c.rotation_rad}};
}

void from_json(const Json& j, OffsetCalibration& c) {
  c.dx = j.at("dx").get<double>();
  c.dy = j.at("dy").get<double>();
  c.pixel_scale_um = j.at("pixel_scale_um").get<double>();
  c.timestamp = j.contains("timestamp") ? parse_iso8601(j.at("timestamp").get<std::string>()) : TimePoint{};
  c.probe_id = j.value("probe_id", std::string());
  c.rotation_rad = j.value("rotation_rad", 0.0);
}

void to_json(Json& j, const DieAnchor& a) {
  j = Json{{"corner", a.corner}, {"width_mm", a.width_mm}, {"height_mm", a.height_mm}};
}

void from_json(const Json& j, DieAnchor& a) {
  a.corner = j.at("corner").get<StagePosition>();
  a.width_mm = j.at("width_mm").get<double>();
  a.height_mm = j.at("height_mm").get<double>();
}

CalibrationStore::CalibrationStore(std::string path) : path_(std::move(path)) {}

void CalibrationStore::set_offset(const OffsetCalibration& cal) {
  cal.validate();
  if (cal.probe_id.empty()) throw Error(ErrorCode::validation, "calibration lacks a probe identity");
  offsets_[cal.probe_id] = cal;
}

std::optional<OffsetCalibration> CalibrationStore::offset(const std::string& probe_id) const {
  const auto it = offsets_.find(probe_id);
  if (it == offsets_.end()) return std::nullopt;
  return it->second;
}

void CalibrationStore::change_tip(const ProbeTip& tip) {
  // Tip-to-tip tolerances move the coil center, so even a same-model swap
  // needs a fresh measurement.
  offsets_.erase(tip.id());
  tip_ = tip;
}

Json CalibrationStore::to_json() const {
  Json offsets = Json::object();
  for (const auto& [id, cal] : offsets_) offsets[id] = cal;
  Json j{{"schema_version", 1}, {"active_tip", tip_}, {"offsets", offsets}};
  j["anchor"] = anchor_ ? Json(*anchor_) : Json(nullptr);
  return j;
}

void CalibrationStore::from_json(const Json& j) {
  try {
    if (j.value("schema_version", 0) != 1) throw Error(ErrorCode::validation, "unsupported calibration schema");
    ProbeTip tip = j.value("active_tip", ProbeTip{});
    std::map<std::string, OffsetCalibration> offsets;
    for (const auto& [id, cal] : j.at("offsets").items()) {
      auto c = cal.get<OffsetCalibration>();
      c.probe_id = id;
      c.validate();
      offsets[id] = c;
    }
    std::optional<DieAnchor> anchor;
    if (j.contains("anchor") && !j.at("anchor").is_null()) anchor = j.at("anchor").get<DieAnchor>();
    tip_ = tip;
    offsets_ = std::move(offsets);
    anchor_ = anchor;
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, fmt::format("malformed calibration document: {}", e.what()));
  }
}

void CalibrationStore::load() {
  if (path_.empty() || !std::filesystem::exists(path_)) return;
  std::ifstream in(path_);
  std::stringstream ss;
  ss << in.rdbuf();
  from_json(parse_json(ss.str()));
}

void CalibrationStore::save() const {
  if (path_.empty()) return;
  const std::string tmp = path_ + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write '{}'", tmp));
    out << to_json().dump(2) << '\n';
  }
  std::filesystem::rename(tmp, path_);
}

}  // namespace emfi
