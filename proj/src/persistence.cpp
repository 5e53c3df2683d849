#include "emfi/persistence.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <fmt/format.h>

#include "emfi/error.hpp"
#include "emfi/serialization.hpp"

namespace emfi {

std::uint64_t ScanResult::total_attempts() const {
  std::uint64_t n = 0;
  for (const auto& c : cells) {
    for (const auto h : c.histogram) n += h;
  }
  return n;
}

const PositionStats* ScanResult::argmax() const {
  const PositionStats* best = nullptr;
  for (const auto& c : cells) {
    if (c.stats.successes == 0) continue;
    if (!best || c.stats.successes > best->stats.successes ||
        (c.stats.successes == best->stats.successes &&
         (c.die.y < best->die.y || (c.die.y == best->die.y && c.die.x < best->die.x)))) {
      best = &c;
    }
  }
  return best;
}

bool counts_as_attempt(const AttemptRecord& r, bool count_error_attempts) {
  if (count_error_attempts) return true;
  return r.device_error.empty() && r.outcome != AttemptOutcome::BootFailure &&
         r.outcome != AttemptOutcome::Timeout;
}

ScanResult scan_result_from_records(const std::vector<AttemptRecord>& records, bool count_error_attempts) {
  ScanResult result;
  std::map<std::pair<double, double>, std::size_t> index;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.die.x, r.die.y);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, result.cells.size()).first;
      result.cells.push_back({r.die, r.position, {}, {}});
    }
    auto& cell = result.cells[it->second];
    ++cell.histogram[static_cast<std::size_t>(r.outcome)];
    if (counts_as_attempt(r, count_error_attempts)) {
      ++cell.stats.attempts;
      if (is_success(r.outcome)) ++cell.stats.successes;
    }
  }
  return result;
}

std::vector<PlanStats> stats_by_plan(const std::vector<AttemptRecord>& records, bool count_error_attempts) {
  std::map<TriggerPlan, SuccessStats> plans;
  for (const auto& r : records) {
    auto& s = plans[r.trigger];
    if (counts_as_attempt(r, count_error_attempts)) {
      ++s.attempts;
      if (is_success(r.outcome)) ++s.successes;
    }
  }
  std::vector<PlanStats> out;
  out.reserve(plans.size());
  for (const auto& [plan, stats] : plans) out.push_back({plan, stats});
  return out;
}

std::vector<DelayGroup> group_delays(const std::vector<AttemptRecord>& records, std::int64_t threshold) {
  std::map<std::int64_t, std::uint64_t> hits;
  for (const auto& r : records) {
    if (is_success(r.outcome)) ++hits[r.trigger.delay.value()];
  }
  std::vector<DelayGroup> groups;
  std::vector<std::int64_t> members;
  const auto close_group = [&] {
    if (members.empty()) return;
    DelayGroup g;
    g.lo = members.front();
    g.hi = members.back();
    g.median = members[(members.size() - 1) / 2];
    for (const auto d : members) g.successes += hits[d];
    groups.push_back(g);
    members.clear();
  };
  for (const auto& [delay, n] : hits) {
    if (!members.empty() && delay - members.back() > threshold) close_group();
    members.push_back(delay);
  }
  close_group();
  return groups;
}

std::string export_heatmap(const ScanResult& result) {
  std::string out = "x_mm,y_mm,attempts,faults,crashes,bypasses\n";
  for (const auto& c : result.cells) {
    std::uint64_t attempts = 0;
    for (const auto h : c.histogram) attempts += h;
    const auto count = [&](AttemptOutcome o) { return c.histogram[static_cast<std::size_t>(o)]; };
    out += fmt::format("{:.3f},{:.3f},{},{},{},{}\n", c.die.x, c.die.y, attempts,
                       count(AttemptOutcome::PayloadFault), count(AttemptOutcome::Crash),
                       count(AttemptOutcome::BypassSuccess));
  }
  return out;
}

std::string format_rate(const SuccessStats& stats) {
  if (stats.attempts == 0) throw Error(ErrorCode::undefined_rate, "success rate of zero attempts");
  // Hundredths of a percent, rounded half up in integer arithmetic.
  const std::uint64_t bp = (stats.successes * 20000 + stats.attempts) / (2 * stats.attempts);
  return fmt::format("{}.{:02}%", bp / 100, bp % 100);
}

std::string export_summary(const std::vector<PlanStats>& rows) {
  std::string out = "Delay/ΔDelay | Success/Attempts | Success Rate\n";
  for (const auto& r : rows) {
    out += fmt::format("{}/{} | {}/{} | {}\n", r.plan.delay.value(), r.plan.window.value(), r.stats.successes,
                       r.stats.attempts, r.stats.attempts == 0 ? std::string("-") : format_rate(r.stats));
  }
  return out;
}

LogContents read_attempt_log(const std::filesystem::path& path) {
  LogContents contents;
  std::ifstream in(path, std::ios::binary);
  if (!in) return contents;
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();

  std::size_t start = 0;
  std::size_t line_no = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    if (end == std::string::npos) {
      contents.torn_bytes = text.size() - start;
      break;
    }
    ++line_no;
    const std::string_view line(text.data() + start, end - start);
    start = end + 1;
    if (line.empty()) continue;
    try {
      contents.records.push_back(parse_record(line));
    } catch (const Error& e) {
      throw Error(e.code(), fmt::format("{}:{}: {}", path.string(), line_no, e.what()));
    }
  }
  return contents;
}

AttemptLog::AttemptLog(const std::filesystem::path& path) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (std::filesystem::exists(path)) {
    auto contents = read_attempt_log(path);
    existing_ = std::move(contents.records);
    truncated_ = contents.torn_bytes;
    if (truncated_ > 0) {
      std::filesystem::resize_file(path, std::filesystem::file_size(path) - truncated_);
    }
  }
  file_ = std::fopen(path.c_str(), "ab");
  if (!file_) throw Error(ErrorCode::io, fmt::format("cannot open attempt log '{}'", path.string()));
}

AttemptLog::~AttemptLog() {
  if (file_) std::fclose(file_);
}

void AttemptLog::append(const AttemptRecord& record) {
  std::string line = serialize_record(record);
  line.push_back('\n');
  if (std::fwrite(line.data(), 1, line.size(), file_) != line.size() || std::fflush(file_) != 0) {
    throw Error(ErrorCode::io, fmt::format("write to '{}' failed", path_.string()));
  }
  ++written_;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write '{}'", tmp.string()));
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

void write_config_snapshot(const CampaignPaths& paths, const CampaignConfig& config) {
  write_text_file(paths.config(), Json(config).dump(2) + "\n");
}

LoadedCampaign load_campaign(const std::filesystem::path& dir) {
  const CampaignPaths paths{dir};
  std::ifstream in(paths.config());
  if (!in) throw Error(ErrorCode::not_found, fmt::format("no campaign config in '{}'", dir.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  LoadedCampaign c;
  c.config = parse_campaign_config(parse_json(ss.str()));
  c.log = read_attempt_log(paths.log());
  c.scan = scan_result_from_records(c.log.records, c.config.count_error_attempts);
  c.plans = stats_by_plan(c.log.records, c.config.count_error_attempts);
  return c;
}

void export_campaign(const std::filesystem::path& dir) {
  const CampaignPaths paths{dir};
  const auto c = load_campaign(dir);
  write_text_file(paths.heatmap(), export_heatmap(c.scan));
  write_text_file(paths.summary(), export_summary(c.plans));
}

}  // namespace emfi
