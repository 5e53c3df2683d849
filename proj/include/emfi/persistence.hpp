#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "emfi/config.hpp"
#include "emfi/types.hpp"

namespace emfi {

// ---------------------------------------------------------------------------
// Results derived from attempt records

struct PositionStats {
  DiePoint die;
  StagePosition stage;
  SuccessStats stats;
  OutcomeHistogram histogram{};
  bool operator==(const PositionStats&) const = default;
};

/// Per-position counts in first-visit order. The histogram of every cell sums
/// to the attempts made there.
struct ScanResult {
  std::vector<PositionStats> cells;

  std::uint64_t total_attempts() const;
  /// Cell with the most successes, ties to the lowest (y, x). Null if no cell
  /// has a success.
  const PositionStats* argmax() const;
  bool operator==(const ScanResult&) const = default;
};

/// Run of successful delays whose neighbours are at most the grouping
/// threshold apart.
struct DelayGroup {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  std::int64_t median = 0;  // lower middle of the successful delays
  std::uint64_t successes = 0;
  bool operator==(const DelayGroup&) const = default;
};

struct PlanStats {
  TriggerPlan plan;
  SuccessStats stats;
  bool operator==(const PlanStats&) const = default;
};

/// Whether an outcome enters the success-rate denominator.
bool counts_as_attempt(const AttemptRecord& r, bool count_error_attempts);

ScanResult scan_result_from_records(const std::vector<AttemptRecord>& records,
                                    bool count_error_attempts = true);
/// Stats per trigger plan, ordered by plan.
std::vector<PlanStats> stats_by_plan(const std::vector<AttemptRecord>& records,
                                     bool count_error_attempts = true);
/// Groups the planned delays that produced at least one success.
std::vector<DelayGroup> group_delays(const std::vector<AttemptRecord>& records, std::int64_t threshold);

// ---------------------------------------------------------------------------
// Exports

/// CSV with header x_mm,y_mm,attempts,faults,crashes,bypasses; one row per
/// position in die coordinates.
std::string export_heatmap(const ScanResult& result);
/// "Delay/ΔDelay | Success/Attempts | Success Rate" table, one row per plan.
std::string export_summary(const std::vector<PlanStats>& rows);
/// Rate as a percentage with two decimals, rounded half up: 0.2206 -> "22.06%".
std::string format_rate(const SuccessStats& stats);

// ---------------------------------------------------------------------------
// Attempt log

struct LogContents {
  std::vector<AttemptRecord> records;
  /// Bytes of an incomplete final line (crash mid-write), 0 if none.
  std::size_t torn_bytes = 0;
};

/// Reads a JSON-lines attempt log without modifying it. A torn final line is
/// skipped and reported; a malformed complete line is an error.
LogContents read_attempt_log(const std::filesystem::path& path);

/// Append-only writer. Opening an existing log cuts off a torn final line so
/// new records start on a line boundary. Every append is flushed.
class AttemptLog {
 public:
  explicit AttemptLog(const std::filesystem::path& path);
  ~AttemptLog();
  AttemptLog(const AttemptLog&) = delete;
  AttemptLog& operator=(const AttemptLog&) = delete;

  const std::vector<AttemptRecord>& existing() const { return existing_; }
  std::size_t truncated_bytes() const { return truncated_; }

  void append(const AttemptRecord& record);
  std::uint64_t lines_written() const { return written_; }

 private:
  std::filesystem::path path_;
  std::FILE* file_ = nullptr;
  std::vector<AttemptRecord> existing_;
  std::size_t truncated_ = 0;
  std::uint64_t written_ = 0;
};

// ---------------------------------------------------------------------------
// Campaign directories

/// config.json, attempts.jsonl, heatmap.csv and summary.txt under one folder.
struct CampaignPaths {
  std::filesystem::path dir;

  std::filesystem::path config() const { return dir / "config.json"; }
  std::filesystem::path log() const { return dir / "attempts.jsonl"; }
  std::filesystem::path heatmap() const { return dir / "heatmap.csv"; }
  std::filesystem::path summary() const { return dir / "summary.txt"; }
};

void write_config_snapshot(const CampaignPaths& paths, const CampaignConfig& config);

struct LoadedCampaign {
  CampaignConfig config;
  LogContents log;
  ScanResult scan;
  std::vector<PlanStats> plans;
};

/// Reads a campaign directory. A missing or empty log gives an empty campaign.
LoadedCampaign load_campaign(const std::filesystem::path& dir);

/// Writes heatmap.csv and summary.txt from the log. The log is not touched.
void export_campaign(const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace emfi
