#include "emfi/motion.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include <fmt/format.h>

#include "emfi/error.hpp"

namespace emfi {

void MotionLimits::validate() const {
  if (!(travel_mm > 0.0) || !(step_mm > 0.0) || !(max_speed_mm_s > 0.0)) {
    throw Error(ErrorCode::validation, "motion limits must be positive");
  }
  if (travel_mm < step_mm) throw Error(ErrorCode::validation, "travel must be >= step quantum");
  const double spm = 1.0 / step_mm;
  if (std::abs(spm - std::round(spm)) > 1e-6) {
    throw Error(ErrorCode::validation, "step quantum must divide one millimeter");
  }
}

std::int64_t MotionLimits::steps_per_mm() const {
  return static_cast<std::int64_t>(std::llround(1.0 / step_mm));
}

std::int64_t MotionLimits::to_steps(double mm) const {
  return static_cast<std::int64_t>(std::llround(mm * static_cast<double>(steps_per_mm())));
}

double MotionLimits::from_steps(std::int64_t steps) const {
  return static_cast<double>(steps) / static_cast<double>(steps_per_mm());
}

StagePosition MotionLimits::quantize(const StagePosition& p) const {
  return {quantize(p.x), quantize(p.y), quantize(p.z)};
}

bool MotionLimits::within(const StagePosition& p) const {
  const auto in = [&](double v) { return v >= 0.0 && v <= travel_mm; };
  return p.is_finite() && in(p.x) && in(p.y) && in(p.z);
}

// ---------------------------------------------------------------------------
// G-code codec

namespace {

struct Visitor {
  std::string operator()(const gcode::Home&) const { return "G28\n"; }
  std::string operator()(const gcode::MoveAbsolute& m) const {
    return fmt::format("G1 X{:.3f} Y{:.3f} Z{:.3f} F{}\n", m.target.x, m.target.y, m.target.z,
                       m.feed_mm_min);
  }
  std::string operator()(const gcode::MoveRelative& m) const {
    return fmt::format("G91\nG1 X{:.3f} Y{:.3f} Z{:.3f} F{}\nG90\n", m.delta.x, m.delta.y,
                       m.delta.z, m.feed_mm_min);
  }
  std::string operator()(const gcode::ReportPosition&) const { return "M114\n"; }
  std::string operator()(const gcode::SetFanSpeed& f) const {
    return fmt::format("M106 P{} S{}\n", f.index, f.duty);
  }
};

/// Cursor over one line that reports errors as absolute byte offsets.
class Scanner {
 public:
  Scanner(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  bool done() const { return pos_ >= text_.size(); }
  std::size_t offset() const { return base_ + pos_; }

  void skip_spaces() {
    while (pos_ < text_.size() && text_[pos_] == ' ') ++pos_;
  }

  void expect(std::string_view word) {
    if (text_.substr(pos_, word.size()) != word) {
      throw ParseError(offset(), fmt::format("expected '{}'", word));
    }
    pos_ += word.size();
  }

  bool accept(std::string_view word) {
    if (text_.substr(pos_, word.size()) == word) {
      pos_ += word.size();
      return true;
    }
    return false;
  }

  double number() {
    double v = 0.0;
    const char* first = text_.data() + pos_;
    const auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), v);
    if (ec != std::errc() || !std::isfinite(v)) throw ParseError(offset(), "expected number");
    pos_ += static_cast<std::size_t>(ptr - first);
    return v;
  }

  int integer() {
    int v = 0;
    const char* first = text_.data() + pos_;
    const auto [ptr, ec] = std::from_chars(first, text_.data() + text_.size(), v);
    if (ec != std::errc()) throw ParseError(offset(), "expected integer");
    pos_ += static_cast<std::size_t>(ptr - first);
    return v;
  }

  void expect_end() {
    skip_spaces();
    if (!done()) throw ParseError(offset(), "unexpected trailing characters");
  }

 private:
  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

struct Line {
  std::string_view text;
  std::size_t offset;
};

std::vector<Line> split_lines(std::string_view text) {
  std::vector<Line> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back({line, start});
    start = end + 1;
  }
  return lines;
}

/// "G1 X<f> Y<f> Z<f> F<i>" with all four words in order.
std::pair<StagePosition, int> parse_linear_move(const Line& line) {
  Scanner s(line.text, line.offset);
  if (!s.accept("G1") && !s.accept("G0")) throw ParseError(s.offset(), "expected G0 or G1");
  StagePosition p;
  s.skip_spaces();
  s.expect("X");
  p.x = s.number();
  s.skip_spaces();
  s.expect("Y");
  p.y = s.number();
  s.skip_spaces();
  s.expect("Z");
  p.z = s.number();
  s.skip_spaces();
  s.expect("F");
  const int feed = s.integer();
  s.expect_end();
  return {p, feed};
}

}  // namespace

void validate(const GCodeCommand& cmd) {
  if (const auto* m = std::get_if<gcode::MoveAbsolute>(&cmd)) {
    if (m->feed_mm_min <= 0) throw Error(ErrorCode::validation, "feed must be > 0");
    if (!m->target.is_finite()) throw Error(ErrorCode::validation, "target must be finite");
  } else if (const auto* r = std::get_if<gcode::MoveRelative>(&cmd)) {
    if (r->feed_mm_min <= 0) throw Error(ErrorCode::validation, "feed must be > 0");
    if (!r->delta.is_finite()) throw Error(ErrorCode::validation, "delta must be finite");
  } else if (const auto* f = std::get_if<gcode::SetFanSpeed>(&cmd)) {
    if (f->duty < 0 || f->duty > 255) throw Error(ErrorCode::validation, "fan duty must be in [0, 255]");
    if (f->index < 0) throw Error(ErrorCode::validation, "fan index must be >= 0");
  }
}

std::string encode(const GCodeCommand& cmd) {
  validate(cmd);
  return std::visit(Visitor{}, cmd);
}

GCodeCommand decode(std::string_view text) {
  const auto lines = split_lines(text);
  if (lines.empty()) throw ParseError(0, "empty command");

  if (lines.size() == 3) {
    Scanner head(lines[0].text, lines[0].offset);
    head.expect("G91");
    head.expect_end();
    auto [delta, feed] = parse_linear_move(lines[1]);
    Scanner tail(lines[2].text, lines[2].offset);
    tail.expect("G90");
    tail.expect_end();
    GCodeCommand cmd = gcode::MoveRelative{delta, feed};
    validate(cmd);
    return cmd;
  }
  if (lines.size() != 1) throw ParseError(lines[1].offset, "unexpected extra line");

  const Line& line = lines[0];
  Scanner s(line.text, line.offset);
  GCodeCommand cmd;
  if (s.accept("G28")) {
    s.expect_end();
    cmd = gcode::Home{};
  } else if (s.accept("M114")) {
    s.expect_end();
    cmd = gcode::ReportPosition{};
  } else if (s.accept("M106")) {
    gcode::SetFanSpeed f;
    s.skip_spaces();
    s.expect("P");
    f.index = s.integer();
    s.skip_spaces();
    s.expect("S");
    f.duty = s.integer();
    s.expect_end();
    cmd = f;
  } else {
    auto [target, feed] = parse_linear_move(line);
    cmd = gcode::MoveAbsolute{target, feed};
  }
  validate(cmd);
  return cmd;
}

StagePosition decode_position_report(std::string_view line) {
  Scanner s(line, 0);
  StagePosition p;
  s.skip_spaces();
  s.expect("X:");
  p.x = s.number();
  s.skip_spaces();
  s.expect("Y:");
  p.y = s.number();
  s.skip_spaces();
  s.expect("Z:");
  p.z = s.number();
  if (!s.done() && line[s.offset()] != ' ') throw ParseError(s.offset(), "malformed position report");
  return p;
}

// ---------------------------------------------------------------------------
// Controller

namespace {

std::string single_line(const GCodeCommand& cmd) {
  std::string line = encode(cmd);
  line.pop_back();
  return line;
}

}  // namespace

MotionController::MotionController(LineTransport& transport, MotionLimits limits, Clock& clock,
                                   Interlock* interlock)
    : transport_(transport), limits_(limits), clock_(clock), interlock_(interlock) {
  limits_.validate();
}

std::vector<std::string> MotionController::command(std::string_view line) {
  auto lines = transact(
      transport_, line, response_timeout_,
      [](std::string_view l) { return l.starts_with("ok") || l.starts_with("Error"); },
      Device::Motion, trace_);
  for (const auto& l : lines) {
    if (l.starts_with("Error")) {
      throw Error(ErrorCode::device, fmt::format("motion controller rejected '{}': {}", line, l));
    }
  }
  return lines;
}

StagePosition MotionController::query_position() {
  for (const auto& l : command("M114")) {
    if (l.starts_with("X:")) return decode_position_report(l);
  }
  throw Error(ErrorCode::device, "M114 returned no position report");
}

void MotionController::home() {
  if (interlock_) interlock_->require_motion_permitted();
  state_.moving = true;
  command("G28");
  state_.position = limits_.quantize(query_position());
  state_.moving = false;
  state_.homed = true;
}

MoveAck MotionController::move_to(const StagePosition& target, MmPerSecond feed) {
  if (!(feed.value() > 0.0) || !std::isfinite(feed.value())) {
    throw Error(ErrorCode::validation, "feed must be > 0");
  }
  if (!state_.homed) throw Error(ErrorCode::state, "stage not homed");
  if (!limits_.within(target)) {
    throw Error(ErrorCode::limit,
                fmt::format("target ({:.4f}, {:.4f}, {:.4f}) outside travel [0, {}] mm", target.x,
                            target.y, target.z, limits_.travel_mm));
  }
  if (interlock_) interlock_->require_motion_permitted();

  const StagePosition goal = limits_.quantize(target);
  const TimePoint start = clock_.now();
  if (goal == state_.position) return {goal, Duration::zero()};

  const double speed = std::min(feed.value(), limits_.max_speed_mm_s);
  const int feed_mm_min = std::max(1, static_cast<int>(std::lround(speed * 60.0)));
  state_.moving = true;
  command(single_line(gcode::MoveAbsolute{goal, feed_mm_min}));

  // The firmware acknowledges when the move is queued; poll until it reports
  // the target. Budget: twice the nominal duration plus one second.
  const double dist = std::max({std::abs(goal.x - state_.position.x),
                                std::abs(goal.y - state_.position.y),
                                std::abs(goal.z - state_.position.z)});
  const auto budget = std::chrono::duration_cast<Duration>(
      std::chrono::duration<double>(2.0 * dist / speed + 1.0));
  for (;;) {
    const StagePosition reported = limits_.quantize(query_position());
    if (reported == goal) break;
    if (clock_.now() - start > budget) {
      state_.moving = false;
      state_.position = reported;
      throw Error(ErrorCode::timeout, "stage did not reach target");
    }
    clock_.sleep_for(std::chrono::milliseconds(10));
  }
  state_.position = goal;
  state_.moving = false;
  return {goal, clock_.now() - start};
}

MoveAck MotionController::move_by(const StagePosition& delta, MmPerSecond feed) {
  return move_to(state_.position + delta, feed);
}

StagePosition MotionController::get_position() {
  state_.position = limits_.quantize(query_position());
  return state_.position;
}

void MotionController::set_fan(int index, int duty) {
  command(single_line(gcode::SetFanSpeed{index, duty}));
}

// ---------------------------------------------------------------------------
// Simulated firmware

SimulatedMarlin::SimulatedMarlin(MotionLimits limits, Clock& clock)
    : limits_(limits), clock_(clock), feed_mm_s_(limits.max_speed_mm_s) {
  limits_.validate();
}

void SimulatedMarlin::write_line(std::string_view line) {
  const std::size_t before = out_.size();
  handle(line);
  if (drop_ > 0) {
    --drop_;
    out_.resize(before);
  }
}

std::optional<std::string> SimulatedMarlin::read_line(Duration) {
  if (out_.empty()) return std::nullopt;
  std::string line = std::move(out_.front());
  out_.pop_front();
  return line;
}

StagePosition SimulatedMarlin::position() const {
  return {limits_.from_steps(steps_[0]), limits_.from_steps(steps_[1]),
          limits_.from_steps(steps_[2])};
}

void SimulatedMarlin::move_steps(const std::array<std::int64_t, 3>& target, double feed_mm_s) {
  double sq = 0.0;
  double cheb = 0.0;
  for (std::size_t a = 0; a < 3; ++a) {
    const double d = limits_.from_steps(std::abs(target[a] - steps_[a]));
    sq += d * d;
    cheb = std::max(cheb, d);
  }
  const double speed = std::min(feed_mm_s, limits_.max_speed_mm_s);
  const double seconds = std::max(std::sqrt(sq) / speed, cheb / limits_.max_speed_mm_s);
  last_move_ = std::chrono::duration_cast<Duration>(std::chrono::duration<double>(seconds));
  // Round up so the simulated duration never undercuts the physical bound.
  if (std::chrono::duration<double>(last_move_).count() < seconds) last_move_ += Duration(1);
  clock_.sleep_for(last_move_);
  steps_ = target;
}

void SimulatedMarlin::handle(std::string_view raw) {
  std::string_view line = raw;
  if (const auto c = line.find(';'); c != std::string_view::npos) line = line.substr(0, c);
  while (!line.empty() && (line.back() == ' ' || line.back() == '\r')) line.remove_suffix(1);
  while (!line.empty() && line.front() == ' ') line.remove_prefix(1);

  const auto space = line.find(' ');
  const std::string_view code = line.substr(0, space);
  const std::string_view args = space == std::string_view::npos ? "" : line.substr(space + 1);

  // Collect "<letter><number>" words.
  std::array<std::optional<double>, 26> word{};
  std::size_t i = 0;
  while (i < args.size()) {
    while (i < args.size() && args[i] == ' ') ++i;
    if (i >= args.size()) break;
    const char letter = args[i];
    if (letter < 'A' || letter > 'Z') {
      out_.push_back(fmt::format("Error:Bad word in '{}'", line));
      out_.push_back("ok");
      return;
    }
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(args.data() + i + 1, args.data() + args.size(), v);
    if (ec != std::errc()) {
      out_.push_back(fmt::format("Error:Bad number in '{}'", line));
      out_.push_back("ok");
      return;
    }
    word[static_cast<std::size_t>(letter - 'A')] = v;
    i = static_cast<std::size_t>(ptr - args.data());
  }
  const auto w = [&](char c) { return word[static_cast<std::size_t>(c - 'A')]; };

  if (code.empty()) {
    out_.push_back("ok");
  } else if (code == "G28") {
    move_steps({0, 0, 0}, limits_.max_speed_mm_s);
    homed_ = true;
    out_.push_back("ok");
  } else if (code == "G90") {
    relative_ = false;
    out_.push_back("ok");
  } else if (code == "G91") {
    relative_ = true;
    out_.push_back("ok");
  } else if (code == "G0" || code == "G1") {
    if (!homed_) {
      out_.push_back("Error:Home XYZ First");
      out_.push_back("ok");
      return;
    }
    if (auto f = w('F')) {
      if (*f <= 0.0) {
        out_.push_back("Error:Bad feedrate");
        out_.push_back("ok");
        return;
      }
      feed_mm_s_ = *f / 60.0;
    }
    const std::int64_t max_steps = limits_.to_steps(limits_.travel_mm);
    auto target = steps_;
    const char axes[3] = {'X', 'Y', 'Z'};
    for (std::size_t a = 0; a < 3; ++a) {
      if (auto v = w(axes[a])) {
        const std::int64_t s = limits_.to_steps(*v);
        target[a] = std::clamp<std::int64_t>(relative_ ? steps_[a] + s : s, 0, max_steps);
      }
    }
    move_steps(target, feed_mm_s_);
    out_.push_back("ok");
  } else if (code == "M114") {
    const auto p = position();
    out_.push_back(fmt::format("X:{:.4f} Y:{:.4f} Z:{:.4f} E:0.0000 Count X:{} Y:{} Z:{}", p.x, p.y,
                               p.z, steps_[0], steps_[1], steps_[2]));
    out_.push_back("ok");
  } else if (code == "M106" || code == "M107") {
    const int index = static_cast<int>(w('P').value_or(0.0));
    const int duty = code == "M107" ? 0 : static_cast<int>(w('S').value_or(255.0));
    if (index < 0 || index >= static_cast<int>(fans_.size()) || duty < 0 || duty > 255) {
      out_.push_back("Error:Bad fan parameters");
    } else {
      fans_[static_cast<std::size_t>(index)] = duty;
    }
    out_.push_back("ok");
  } else {
    out_.push_back(fmt::format("echo:Unknown command: \"{}\"", line));
    out_.push_back("ok");
  }
}

}  // namespace emfi
