#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <bit>
#include <cmath>
#include <regex>

#include "emfi/dut_sim.hpp"
#include "emfi/stats.hpp"
#include "support.hpp"

using namespace emfi;
using namespace emfi::test;
using namespace std::chrono_literals;

namespace {

const PulseConfig kPulse{Volts(500), Nanoseconds(73), {4.0, Winding::CW}};

struct Target {
  VirtualClock clock;
  SimulatedDut dut;

  explicit Target(FaultModel model, std::uint64_t seed = 1) : dut(config(std::move(model)), clock) {
    dut.reseed(seed);
  }

  static DutConfig config(FaultModel m) {
    DutConfig c;
    c.model = std::move(m);
    return c;
  }

  /// One boot with a pulse at `at`; returns the landed effect and the output.
  std::pair<std::optional<EffectKind>, std::string> attempt(DiePoint at, const PulseConfig& pulse = kPulse,
                                                            double v_soc = 0.59, std::int64_t delay = 2364) {
    dut.boot(Volts(v_soc));
    dut.consume_spi_event();
    const auto effect = dut.apply_pulse(at, pulse, delay);
    auto out = dut.collect_output(1s);
    dut.power_off();
    return {effect, out};
  }
};

}  // namespace

TEST_CASE("Monte-Carlo fault rate matches the blob probability") {
  const DiePoint center{10, 4};
  const double sigma = 0.8, p_max = 0.3;
  Target t(single_blob_model(center, sigma, p_max));
  constexpr std::uint64_t n = 10000;
  for (const double d : {0.0, 0.4, 0.8, 1.6}) {
    const DiePoint at{center.x + d, center.y};
    std::uint64_t k = 0;
    for (std::uint64_t i = 0; i < n; ++i) {
      if (t.attempt(at).first == EffectKind::LoopFault) ++k;
    }
    const double p = p_max * std::exp(-d * d / (2 * sigma * sigma));
    CAPTURE(d);
    CAPTURE(k);
    CHECK(wilson_interval({k, n}, 0.99).contains(p));
    const auto [lo, hi] = clopper_pearson(k, n, 0.99);
    CHECK(lo <= p);
    CHECK(p <= hi);
  }
}

TEST_CASE("pulses below the voltage knee never fault") {
  Target t(single_blob_model({10, 4}, 1.0, 1.0));
  const PulseConfig weak{Volts(299), Nanoseconds(73), {4.0, Winding::CW}};
  for (int i = 0; i < 2000; ++i) CHECK_FALSE(t.attempt({10, 4}, weak).first);
  CHECK(t.attempt({10, 4}).first == EffectKind::LoopFault);
}

TEST_CASE("nominal V_SoC suppresses faults") {
  Target t(single_blob_model({10, 4}, 1.0, 1.0));
  for (int i = 0; i < 2000; ++i) CHECK_FALSE(t.attempt({10, 4}, kPulse, 0.9).first);
  CHECK_FALSE(t.attempt({10, 4}, kPulse, 0.60).first);
  CHECK(t.attempt({10, 4}, kPulse, 0.599).first);
}

TEST_CASE("no ARK bypass outside the planted windows") {
  Target t(FaultModel::reference_model());
  t.dut.select_payload(payload::ArkVerify{});
  std::mt19937_64 g(3);
  const auto in_window = [](std::int64_t d) {
    for (const auto& w : FaultModel::reference_model().bypass_windows) {
      if (d >= w.center - w.half_width && d <= w.center + w.half_width) return true;
    }
    return false;
  };
  int outside = 0;
  while (outside < 20000) {
    const auto d = static_cast<std::int64_t>(g() % 3001);
    if (in_window(d)) continue;
    const auto [effect, out] = t.attempt({14.5, 3.5}, kPulse, 0.59, d);
    CHECK(effect != EffectKind::ArkBypass);
    CHECK(out != "OFFCHIP BL EXEC");
    ++outside;
  }
  int bypasses = 0;
  for (int i = 0; i < 1000; ++i) bypasses += t.attempt({14.5, 3.5}, kPulse, 0.59, 2364).first == EffectKind::ArkBypass;
  CHECK(bypasses > 150);
}

TEST_CASE("classify_response") {
  const PayloadKind loop = payload::CounterLoop{};
  const PayloadKind sram = payload::SramPattern{};
  const PayloadKind ark = payload::ArkVerify{};
  CHECK(classify_response("COUNTER 1000 EXPECTED 1000", loop) == AttemptOutcome::NoEffect);
  CHECK(classify_response("COUNTER 998 EXPECTED 1000", loop) == AttemptOutcome::PayloadFault);
  CHECK(classify_response("COUNTER 998 EXPECTED 1000\r\n", loop) == AttemptOutcome::PayloadFault);
  CHECK(classify_response("COUNTER x EXPECTED 1000", loop) == AttemptOutcome::Crash);
  CHECK(classify_response("?ABORT 0x0000beef", loop) == AttemptOutcome::Crash);
  CHECK(classify_response("", loop) == AttemptOutcome::Timeout);
  CHECK(classify_response("", loop, false) == AttemptOutcome::Crash);
  CHECK(classify_response("SRAM FAULTS 0", sram) == AttemptOutcome::NoEffect);
  CHECK(classify_response("SRAM FAULTS 2\nDIFF 1 0x0 0x1\nDIFF 2 0x0 0x2", sram) == AttemptOutcome::PayloadFault);
  CHECK(classify_response("SRAM FAULTS", sram) == AttemptOutcome::Crash);
  CHECK(classify_response("ARK FAIL HALT", ark) == AttemptOutcome::NoEffect);
  CHECK(classify_response("ARK OK", ark) == AttemptOutcome::NoEffect);
  CHECK(classify_response("PSP boot\nOFFCHIP BL EXEC", ark) == AttemptOutcome::BypassSuccess);
  CHECK(classify_response("\x01\x02garbage", ark) == AttemptOutcome::Crash);
  CHECK(classify_response("COUNTER 1000 EXPECTED 1000", ark) == AttemptOutcome::Crash);
}

TEST_CASE("payload output under forced effects") {
  Target t(FaultModel{});
  t.dut.select_payload(payload::SramPattern{0xA5A5A5A5u, 64});
  t.dut.force_next_effect(EffectKind::SramFlip);
  const auto [effect, out] = t.attempt({0, 0});
  CHECK(effect == EffectKind::SramFlip);
  std::smatch m;
  REQUIRE(std::regex_match(out, m, std::regex("SRAM FAULTS 1\nDIFF ([0-9]+) 0x([0-9A-F]{8}) 0x([0-9A-F]{8})")));
  CHECK(std::stoul(m[1]) < 64);
  CHECK(m[2] == "A5A5A5A5");
  CHECK(std::popcount(static_cast<std::uint32_t>(std::stoul(m[2], nullptr, 16) ^ std::stoul(m[3], nullptr, 16))) == 1);
  CHECK(classify_response(out, payload::SramPattern{}) == AttemptOutcome::PayloadFault);

  CHECK(t.attempt({0, 0}).second == "SRAM FAULTS 0");

  t.dut.select_payload(payload::ArkVerify{});
  CHECK(t.attempt({0, 0}).second == "ARK FAIL HALT");
  t.dut.force_next_effect(EffectKind::ArkBypass);
  CHECK(t.attempt({0, 0}).second == "OFFCHIP BL EXEC");

  t.dut.select_payload(payload::CounterLoop{1000});
  CHECK(t.attempt({0, 0}).second == "COUNTER 1000 EXPECTED 1000");
  t.dut.force_next_effect(EffectKind::LoopFault);
  const auto faulted = t.attempt({0, 0}).second;
  CHECK(classify_response(faulted, payload::CounterLoop{}) == AttemptOutcome::PayloadFault);
  t.dut.force_next_effect(EffectKind::Crash);
  const auto crashed = t.attempt({0, 0}).second;
  CHECK(crashed.starts_with("?ABORT 0x"));
  CHECK(classify_response(crashed, payload::CounterLoop{}) == AttemptOutcome::Crash);
}

TEST_CASE("unmodified ARK verifies") {
  VirtualClock clock;
  DutConfig cfg;
  cfg.ark_key_modified = false;
  SimulatedDut dut(cfg, clock);
  dut.select_payload(payload::ArkVerify{});
  dut.boot(Volts(0.9));
  dut.consume_spi_event();
  CHECK(dut.collect_output(1s) == "ARK OK");
}

TEST_CASE("target state machine") {
  VirtualClock clock;
  SimulatedDut dut(DutConfig{}, clock);
  CHECK(dut.state().phase == DutPhase::Off);
  CHECK_FALSE(dut.target_powered());
  CHECK(dut.collect_output(1s).empty());
  CHECK(error_code([&] { dut.consume_spi_event(); }) == ErrorCode::state);
  CHECK(error_code([&] { dut.run_payload_to_completion(); }) == ErrorCode::state);

  dut.boot(Volts(0.9));
  CHECK(dut.state().phase == DutPhase::Booting);
  CHECK(dut.pending_spi_event() == clock.now() + 1500ms);
  CHECK(error_code([&] { dut.boot(Volts(0.9)); }) == ErrorCode::state);
  CHECK_FALSE(dut.apply_pulse({14.5, 3.5}, kPulse, 100));  // not yet running
  dut.consume_spi_event();
  CHECK(dut.state().phase == DutPhase::RunningPayload);
  CHECK_FALSE(dut.pending_spi_event());
  const TimePoint before = clock.now();
  CHECK(dut.collect_output(1s) == "COUNTER 1000 EXPECTED 1000");
  CHECK(clock.now() - before == 200ms);
  CHECK(dut.state().phase == DutPhase::Halted);
  CHECK(dut.state().halted_outcome == AttemptOutcome::NoEffect);
  CHECK(dut.collect_output(1s).empty());
  dut.power_off();
  CHECK(dut.state().phase == DutPhase::Off);

  dut.boot(Volts(0.55));
  CHECK(dut.state().phase == DutPhase::Halted);
  CHECK(dut.state().halted_outcome == AttemptOutcome::BootFailure);
  CHECK_FALSE(dut.pending_spi_event());
  CHECK(dut.target_powered());
  CHECK(dut.state().boot_count == 2);
}

TEST_CASE("one effect per boot") {
  Target t(single_blob_model({0, 0}, 1.0, 1.0));
  t.dut.boot(Volts(0.59));
  t.dut.consume_spi_event();
  CHECK(t.dut.apply_pulse({0, 0}, kPulse, 0) == EffectKind::LoopFault);
  CHECK_FALSE(t.dut.apply_pulse({0, 0}, kPulse, 0));
}

TEST_CASE("fault model JSON round trip and validation") {
  CHECK(parse_fault_model(dump_fault_model(FaultModel::reference_model())) == FaultModel::reference_model());
  std::mt19937_64 g(4);
  for (int i = 0; i < 200; ++i) {
    FaultModel m;
    m.seed = g();
    m.voltage_knee = milli(g, 0, 500000);
    m.vsoc_threshold = milli(g, 300, 1500);
    m.vsoc_suppression = milli(g, 0, 1000);
    for (int b = 0, nb = static_cast<int>(g() % 5); b < nb; ++b) {
      FaultBlob blob{{milli(g, 0, 22000), milli(g, 0, 9000)}, milli(g, 1, 5000), milli(g, 0, 1000),
                     static_cast<EffectKind>(g() % 4), {}};
      if (g() % 2) blob.payloads = {static_cast<PayloadTag>(g() % 3)};
      m.blobs.push_back(blob);
    }
    for (int w = 0, nw = static_cast<int>(g() % 5); w < nw; ++w) {
      m.bypass_windows.push_back({static_cast<std::int64_t>(g() % 3001), static_cast<std::int64_t>(g() % 8),
                                  milli(g, 0, 1000)});
    }
    CHECK(parse_fault_model(dump_fault_model(m)) == m);
  }

  auto bad = FaultModel::reference_model();
  bad.blobs[0].sigma_mm = 0;
  CHECK(error_code([&] { bad.validate(); }) == ErrorCode::validation);
  bad = FaultModel::reference_model();
  bad.bypass_windows[0].weight = 1.5;
  CHECK(error_code([&] { bad.validate(); }) == ErrorCode::validation);
  CHECK(error_code([] { parse_fault_model(R"({"schema_version": 9})"); }) == ErrorCode::validation);
  CHECK(error_code([] { parse_fault_model("{"); }) == ErrorCode::parse);
  CHECK(error_code([] { load_fault_model("/nonexistent/model.json"); }) == ErrorCode::io);
}

TEST_CASE("reference model plants the bypass window at the strongest delay") {
  const auto m = FaultModel::reference_model();
  const FaultBlob* bypass = nullptr;
  for (const auto& b : m.blobs) {
    if (b.effect == EffectKind::ArkBypass) bypass = &b;
  }
  REQUIRE(bypass);
  const PayloadTag ark = PayloadTag::ArkVerify;
  CHECK(effect_probability(m, *bypass, {14.5, 3.5}, kPulse, 0.59, 2364, ark) == doctest::Approx(0.2206));
  CHECK(effect_probability(m, *bypass, {14.5, 3.5}, kPulse, 0.59, 128, ark) == doctest::Approx(0.0158));
  CHECK(effect_probability(m, *bypass, {14.5, 3.5}, kPulse, 0.59, 2384, ark) == doctest::Approx(0.0352));
  CHECK(effect_probability(m, *bypass, {14.5, 3.5}, kPulse, 0.59, 2391, ark) == doctest::Approx(0.0068));
  CHECK(effect_probability(m, *bypass, {14.5, 3.5}, kPulse, 0.59, 1000, ark) == 0.0);
  CHECK(effect_probability(m, *bypass, {14.5, 3.5}, kPulse, 0.90, 2364, ark) == 0.0);
  CHECK(effect_probability(m, *bypass, {14.5, 3.5}, kPulse, 0.59, 2364, PayloadTag::CounterLoop) == 0.0);
}
