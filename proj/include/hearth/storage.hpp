#pragma once

// Append-only persistence under one data directory:
//   ledger.jsonl      lifecycle events (alerts, deliveries, mode, lights,
//                     calibration), fsync'd per entry
//   readings.jsonl    sensor readings, buffered and flushed in batches
//   calibration.json  last calibration record per gas device

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hearth/sensor_models.hpp"
#include "hearth/virtual_home.hpp"

namespace hearth {

struct LedgerEntry {
  std::uint64_t seq = 0;
  std::string kind;
  nlohmann::json payload;
  std::int64_t t_ms = 0;
  std::string wall_time;  // ISO-8601 UTC

  bool operator==(const LedgerEntry&) const = default;
};

std::string serialize(const LedgerEntry& entry);
// Throws std::invalid_argument describing what is wrong with the line.
LedgerEntry parse_ledger_line(std::string_view line);

// Strict replay: every entry with seq >= from_seq, in order. A line that does
// not parse, is unterminated, or breaks the gapless sequence raises
// ReplayError naming its 1-based line number. A missing file replays empty.
std::vector<LedgerEntry> replay_ledger(const std::filesystem::path& path,
                                       std::uint64_t from_seq = 1);

struct RecoveredLedger {
  std::vector<LedgerEntry> entries;
  std::uintmax_t valid_bytes = 0;  // length of the well-formed prefix
  bool torn_tail = false;          // bytes after the prefix were discarded
};

// Longest well-formed prefix of the ledger file.
RecoveredLedger recover_ledger(const std::filesystem::path& path);

class Ledger {
 public:
  // Opens (creating if needed) for append. A torn final line left by a crash
  // is truncated away; corruption before the tail throws StorageError.
  explicit Ledger(std::filesystem::path path);
  ~Ledger();
  Ledger(const Ledger&) = delete;
  Ledger& operator=(const Ledger&) = delete;

  // Writes and fsyncs one entry; returns its seq (previous + 1). Throws
  // StorageError on I/O failure.
  std::uint64_t append(std::string kind, nlohmann::json payload, std::int64_t t_ms,
                       std::string wall_time);

  std::uint64_t last_seq() const { return last_seq_; }
  std::vector<LedgerEntry> replay(std::uint64_t from_seq = 1) const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t last_seq_ = 0;
};

// Readings log with a bounded per-device in-memory index for recent queries.
class ReadingsLog {
 public:
  static constexpr std::size_t kDefaultCapacity = 1000;

  explicit ReadingsLog(std::filesystem::path path, std::size_t per_device_capacity = kDefaultCapacity,
                       std::size_t flush_every = 256);
  ~ReadingsLog();
  ReadingsLog(const ReadingsLog&) = delete;
  ReadingsLog& operator=(const ReadingsLog&) = delete;

  void append(const SensorReading& reading);
  void flush();

  // Newest first, at most `limit`.
  std::vector<SensorReading> recent(std::string_view device, std::size_t limit) const;

 private:
  void index(SensorReading reading);

  std::filesystem::path path_;
  std::size_t capacity_;
  std::size_t flush_every_;
  std::string buffer_;
  std::size_t buffered_ = 0;
  std::map<std::string, std::deque<SensorReading>, std::less<>> recent_;
};

nlohmann::ordered_json to_json(const CalibrationRecord& record);
CalibrationRecord calibration_from_json(const nlohmann::json& j);

// Single JSON document keyed by device id; last write wins.
class CalibrationStore {
 public:
  explicit CalibrationStore(std::filesystem::path path);

  void save(const std::string& device, const CalibrationRecord& record);
  // Throws NotCalibrated when the device has no record.
  CalibrationRecord load(std::string_view device) const;
  std::map<std::string, CalibrationRecord> load_all() const;

 private:
  std::filesystem::path path_;
};

struct Storage {
  explicit Storage(const std::filesystem::path& data_dir);

  static constexpr std::string_view kLedgerFile = "ledger.jsonl";
  static constexpr std::string_view kReadingsFile = "readings.jsonl";
  static constexpr std::string_view kCalibrationFile = "calibration.json";

  std::filesystem::path data_dir;
  Ledger ledger;
  ReadingsLog readings;
  CalibrationStore calibration;
};

}  // namespace hearth
