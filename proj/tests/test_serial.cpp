#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cstdlib>
#include <fcntl.h>
#include <thread>

#include "emfi/motion.hpp"
#include "emfi/serial_port.hpp"
#include "support.hpp"

using namespace emfi;
using namespace emfi::test;
using namespace std::chrono_literals;

namespace {

/// Pseudo-terminal pair: the master end stands in for the device.
struct Pty {
  int master = -1;
  std::string slave_path;

  Pty() {
    master = ::posix_openpt(O_RDWR | O_NOCTTY);
    REQUIRE(master >= 0);
    REQUIRE(::grantpt(master) == 0);
    REQUIRE(::unlockpt(master) == 0);
    slave_path = ::ptsname(master);
  }
};

}  // namespace

TEST_CASE("serial: lines cross a pseudo-terminal in both directions") {
  Pty pty;
  SerialPort device(pty.master);
  SerialPort host(SerialSettings{pty.slave_path, 115200});

  host.write_line("M114");
  CHECK(device.read_line(1s) == "M114");
  device.write_line("X:1.0000 Y:2.0000 Z:3.0000");
  device.write_line("ok");
  CHECK(host.read_line(1s) == "X:1.0000 Y:2.0000 Z:3.0000");
  CHECK(host.read_line(1s) == "ok");
  CHECK_FALSE(host.read_line(50ms));
}

TEST_CASE("serial: carriage returns are stripped and partial lines wait for their terminator") {
  Pty pty;
  SerialPort host(SerialSettings{pty.slave_path, 115200});
  REQUIRE(::write(pty.master, "ok\r\npart", 8) == 8);
  CHECK(host.read_line(1s) == "ok");
  CHECK_FALSE(host.read_line(50ms));
  REQUIRE(::write(pty.master, "ial\n", 4) == 4);
  CHECK(host.read_line(1s) == "partial");
  ::close(pty.master);
}

TEST_CASE("serial: open errors") {
  CHECK(error_code([] { SerialPort p(SerialSettings{"/nonexistent/tty", 115200}); }) == ErrorCode::device);
  Pty pty;
  CHECK(error_code([&] { SerialPort p(SerialSettings{pty.slave_path, 12345}); }) == ErrorCode::validation);
  ::close(pty.master);
}

TEST_CASE("serial: motion controller drives simulated firmware over a pty") {
  Pty pty;
  std::atomic<bool> stop{false};
  std::thread firmware([&] {
    VirtualClock sim_clock;
    SimulatedMarlin marlin(MotionLimits{}, sim_clock);
    SerialPort wire(pty.master);
    while (!stop) {
      if (auto line = wire.read_line(20ms)) {
        marlin.write_line(*line);
        while (auto reply = marlin.read_line(Duration::zero())) wire.write_line(*reply);
      }
    }
  });

  {
    WallClock clock;
    SerialPort port(SerialSettings{pty.slave_path, 115200});
    MotionController motion(port, MotionLimits{}, clock);
    motion.home();
    const auto ack = motion.move_to({12.5, 3.0025, 7}, MmPerSecond(10));
    CHECK(ack.position == StagePosition{12.5, 3.0025, 7});
    CHECK(motion.get_position() == StagePosition{12.5, 3.0025, 7});
    // Closing the host end first would hang up the firmware's reads.
    stop = true;
    firmware.join();
  }
}
