#include "emfi/rig.hpp"

#include <filesystem>

#include <fmt/format.h>

#include "emfi/error.hpp"
#include "emfi/random.hpp"

namespace emfi {

namespace {
constexpr std::uint64_t kDutStream = 1;
constexpr std::uint64_t kBoardStream = 2;
}  // namespace

SimBench::SimBench(const SimBenchConfig& cfg)
    : config(cfg),
      clock(cfg.start),
      marlin(cfg.limits, clock),
      pulse_gen(clock, cfg.charge_latency),
      dut(cfg.dut, clock),
      board(
          clock, dut,
          [this](std::int64_t delay) {
            if (!pulse_gen.hardware_trigger()) return false;
            const PulseConfig pulse{Volts(pulse_gen.voltage()), Nanoseconds(pulse_gen.width_ns()), config.tip};
            dut.apply_pulse(probe_die_position(), pulse, delay);
            return true;
          },
          cfg.board) {}

DiePoint SimBench::probe_die_position() const {
  const StagePosition p = marlin.position();
  return {p.x - config.die.corner.x - config.probe_dx, p.y - config.die.corner.y - config.probe_dy};
}

Rig::~Rig() = default;

void Rig::reseed(std::uint64_t campaign_seed, std::uint64_t seq) {
  if (!sim_) return;
  sim_->dut.reseed(derive_seed(campaign_seed, kDutStream, seq));
  sim_->board.reseed(derive_seed(campaign_seed, kBoardStream, seq));
}

std::optional<ClearanceOracle> Rig::clearance_oracle() {
  if (!sim_) return std::nullopt;
  SimBench* bench = sim_.get();
  return ClearanceOracle([bench](double z) { return bench->clearance(z); });
}

std::unique_ptr<Rig> make_simulated_rig(SimBenchConfig cfg) {
  std::unique_ptr<Rig> rig(new Rig());
  rig->sim_ = std::make_unique<SimBench>(cfg);
  SimBench& bench = *rig->sim_;
  rig->clock_ = &bench.clock;
  rig->motion_ = std::make_unique<MotionController>(bench.marlin, cfg.limits, bench.clock, &rig->interlock_);
  rig->pulse_ = std::make_unique<PulseController>(bench.pulse_gen, bench.clock, &rig->interlock_);
  rig->trigger_ = std::make_unique<TriggerPowerController>(bench.board, bench.clock);
  rig->motion_->set_trace(&rig->trace_);
  rig->pulse_->set_trace(&rig->trace_);
  rig->trigger_->set_trace(&rig->trace_);
  rig->console_ = &bench.dut;
  rig->flash_ = &bench.dut;
  rig->calibration_.change_tip(cfg.tip);
  if (cfg.calibrated) {
    OffsetCalibration cal;
    cal.dx = cfg.probe_dx;
    cal.dy = cfg.probe_dy;
    cal.pixel_scale_um = 10.0;
    cal.timestamp = bench.clock.now();
    cal.probe_id = cfg.tip.id();
    rig->calibration_.set_offset(cal);
    rig->calibration_.set_anchor(cfg.die);
  }
  return rig;
}

std::unique_ptr<Rig> make_serial_rig(const SerialRigConfig& cfg) {
  std::unique_ptr<Rig> rig(new Rig());
  rig->owned_clock_ = std::make_unique<WallClock>();
  rig->clock_ = rig->owned_clock_.get();
  auto open = [&](const SerialSettings& s) -> LineTransport& {
    rig->ports_.push_back(std::make_unique<SerialPort>(s));
    return *rig->ports_.back();
  };
  rig->motion_ = std::make_unique<MotionController>(open(cfg.motion), cfg.limits, *rig->clock_, &rig->interlock_);
  rig->pulse_ = std::make_unique<PulseController>(open(cfg.pulse), *rig->clock_, &rig->interlock_);
  rig->trigger_ = std::make_unique<TriggerPowerController>(open(cfg.trigger), *rig->clock_);
  rig->motion_->set_trace(&rig->trace_);
  rig->pulse_->set_trace(&rig->trace_);
  rig->trigger_->set_trace(&rig->trace_);
  rig->owned_console_ = std::make_unique<SerialDutConsole>(open(cfg.console), *rig->clock_);
  rig->owned_flash_ = std::make_unique<ManualFlashEmulator>();
  rig->console_ = rig->owned_console_.get();
  rig->flash_ = rig->owned_flash_.get();
  return rig;
}

RigSpec parse_rig_spec(const Json& j, const std::string& base_dir) {
  RigSpec spec;
  try {
    const auto backend = j.value("backend", std::string("sim"));
    if (backend == "serial") {
      spec.simulated = false;
      const auto& ports = j.at("ports");
      const auto port = [&](const char* name, SerialSettings& s) {
        if (!ports.contains(name)) return;
        const auto& p = ports.at(name);
        if (p.is_string()) {
          s.path = p.get<std::string>();
        } else {
          s.path = p.at("path").get<std::string>();
          s.baud = p.value("baud", s.baud);
        }
      };
      port("motion", spec.serial.motion);
      port("pulse", spec.serial.pulse);
      port("trigger", spec.serial.trigger);
      port("console", spec.serial.console);
      return spec;
    }
    if (backend != "sim") throw Error(ErrorCode::validation, fmt::format("unknown rig backend '{}'", backend));
    auto& sim = spec.sim;
    if (j.contains("fault_model")) {
      const auto& m = j.at("fault_model");
      if (m.is_string()) {
        std::filesystem::path path = m.get<std::string>();
        if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
        sim.dut.model = load_fault_model(path.string());
      } else {
        sim.dut.model = parse_fault_model(m.dump());
      }
    }
    sim.dut.boot_threshold_v = j.value("boot_threshold_v", sim.dut.boot_threshold_v);
    if (j.contains("die")) sim.die = j.at("die").get<DieAnchor>();
    if (j.contains("probe_offset")) {
      sim.probe_dx = j.at("probe_offset").value("dx", sim.probe_dx);
      sim.probe_dy = j.at("probe_offset").value("dy", sim.probe_dy);
    }
    if (j.contains("tip")) sim.tip = j.at("tip").get<ProbeTip>();
    sim.surface_z = j.value("surface_z", sim.surface_z);
    sim.calibrated = j.value("calibrated", sim.calibrated);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::validation, fmt::format("malformed rig section: {}", e.what()));
  }
  return spec;
}

std::unique_ptr<Rig> make_rig(const RigSpec& spec) {
  return spec.simulated ? make_simulated_rig(spec.sim) : make_serial_rig(spec.serial);
}

}  // namespace emfi
