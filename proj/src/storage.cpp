#include "hearth/storage.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "hearth/error.hpp"

namespace hearth {
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return {};
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string errno_text() { return std::strerror(errno); }

void write_all(int fd, std::string_view data, const fs::path& path) {
  while (!data.empty()) {
    const ssize_t n = ::write(fd, data.data(), data.size());
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kStorageError, "write to '" + path.string() + "' failed: " + errno_text());
    }
    data.remove_prefix(static_cast<std::size_t>(n));
  }
}

// Splits into lines; `terminated` reports whether the last line ended in '\n'.
struct Lines {
  std::vector<std::string_view> lines;
  std::vector<std::size_t> ends;  // byte offset just past each line's '\n' (or EOF)
  bool terminated = true;
};

Lines split_lines(std::string_view text) {
  Lines out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) {
      out.lines.push_back(text.substr(pos));
      out.ends.push_back(text.size());
      out.terminated = false;
      break;
    }
    out.lines.push_back(text.substr(pos, nl - pos));
    out.ends.push_back(nl + 1);
    pos = nl + 1;
  }
  return out;
}

SensorReading reading_from_json(const nlohmann::json& j) {
  SensorReading r;
  r.t_ms = j.at("t_ms").get<std::int64_t>();
  r.device = j.at("device").get<std::string>();
  r.raw = j.at("raw").get<std::uint32_t>();
  r.value = j.at("value").is_null() ? std::nan("") : j.at("value").get<double>();
  r.unit = j.at("unit").get<std::string>();
  return r;
}

const fs::path& ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kStorageError, "cannot create '" + dir.string() + "': " + ec.message());
  }
  return dir;
}

}  // namespace

std::string serialize(const LedgerEntry& entry) {
  nlohmann::ordered_json j;
  j["seq"] = entry.seq;
  j["kind"] = entry.kind;
  j["t_ms"] = entry.t_ms;
  j["wall"] = entry.wall_time;
  j["payload"] = entry.payload;
  return j.dump();
}

LedgerEntry parse_ledger_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("entry is not an object");
  try {
    LedgerEntry e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.kind = j.at("kind").get<std::string>();
    e.t_ms = j.at("t_ms").get<std::int64_t>();
    e.wall_time = j.at("wall").get<std::string>();
    e.payload = j.at("payload");
    if (e.seq == 0) throw std::invalid_argument("seq must be >= 1");
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(std::string("missing or mistyped field: ") + ex.what());
  }
}

std::vector<LedgerEntry> replay_ledger(const fs::path& path, std::uint64_t from_seq) {
  if (from_seq < 1) throw Error(ErrorCode::kInvalidInput, "from_seq must be >= 1");
  const std::string text = read_file(path);
  const Lines split = split_lines(text);
  std::vector<LedgerEntry> out;
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < split.lines.size(); ++i) {
    if (i + 1 == split.lines.size() && !split.terminated) {
      throw ReplayError(i + 1, "unterminated final line");
    }
    LedgerEntry e;
    try {
      e = parse_ledger_line(split.lines[i]);
    } catch (const std::invalid_argument& ex) {
      throw ReplayError(i + 1, ex.what());
    }
    if (e.seq != prev + 1) {
      throw ReplayError(i + 1, "seq " + std::to_string(e.seq) + " follows " + std::to_string(prev));
    }
    prev = e.seq;
    if (e.seq >= from_seq) out.push_back(std::move(e));
  }
  return out;
}

RecoveredLedger recover_ledger(const fs::path& path) {
  const std::string text = read_file(path);
  const Lines split = split_lines(text);
  RecoveredLedger out;
  std::uint64_t prev = 0;
  for (std::size_t i = 0; i < split.lines.size(); ++i) {
    if (i + 1 == split.lines.size() && !split.terminated) break;
    try {
      LedgerEntry e = parse_ledger_line(split.lines[i]);
      if (e.seq != prev + 1) break;
      prev = e.seq;
      out.entries.push_back(std::move(e));
      out.valid_bytes = split.ends[i];
    } catch (const std::invalid_argument&) {
      break;
    }
  }
  out.torn_tail = out.valid_bytes < text.size();
  return out;
}

Ledger::Ledger(fs::path path) : path_(std::move(path)) {
  const std::string text = read_file(path_);
  const RecoveredLedger rec = recover_ledger(path_);
  if (rec.torn_tail) {
    // Only the final line may be damaged; anything earlier is real corruption.
    const std::string_view rest = std::string_view(text).substr(rec.valid_bytes);
    if (rest.find('\n') != std::string_view::npos && rest.find('\n') + 1 < rest.size()) {
      throw Error(ErrorCode::kStorageError,
                  "ledger '" + path_.string() + "' is corrupt before its final line");
    }
  }
  fd_ = ::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
  if (fd_ < 0) {
    throw Error(ErrorCode::kStorageError, "cannot open '" + path_.string() + "': " + errno_text());
  }
  if (rec.torn_tail && ::ftruncate(fd_, static_cast<off_t>(rec.valid_bytes)) != 0) {
    throw Error(ErrorCode::kStorageError, "cannot truncate '" + path_.string() + "': " + errno_text());
  }
  last_seq_ = rec.entries.empty() ? 0 : rec.entries.back().seq;
}

Ledger::~Ledger() {
  if (fd_ >= 0) ::close(fd_);
}

std::uint64_t Ledger::append(std::string kind, nlohmann::json payload, std::int64_t t_ms,
                             std::string wall_time) {
  LedgerEntry e{last_seq_ + 1, std::move(kind), std::move(payload), t_ms, std::move(wall_time)};
  std::string line;
  try {
    line = serialize(e);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kStorageError, std::string("payload not serializable: ") + ex.what());
  }
  line.push_back('\n');
  write_all(fd_, line, path_);
  if (::fsync(fd_) != 0) {
    throw Error(ErrorCode::kStorageError, "fsync of '" + path_.string() + "' failed: " + errno_text());
  }
  last_seq_ = e.seq;
  return e.seq;
}

std::vector<LedgerEntry> Ledger::replay(std::uint64_t from_seq) const {
  return replay_ledger(path_, from_seq);
}

ReadingsLog::ReadingsLog(fs::path path, std::size_t per_device_capacity, std::size_t flush_every)
    : path_(std::move(path)), capacity_(per_device_capacity), flush_every_(flush_every) {
  const std::string text = read_file(path_);
  const Lines split = split_lines(text);
  for (std::size_t i = 0; i < split.lines.size(); ++i) {
    if (i + 1 == split.lines.size() && !split.terminated) break;  // torn tail
    try {
      index(reading_from_json(nlohmann::json::parse(split.lines[i])));
    } catch (const nlohmann::json::exception&) {
      // Readings are tolerably lossy; skip what cannot be parsed.
    }
  }
  std::ofstream touch(path_, std::ios::app);
  if (!touch) throw Error(ErrorCode::kStorageError, "cannot open '" + path_.string() + "'");
  if (!split.terminated) touch << '\n';
}

ReadingsLog::~ReadingsLog() {
  try {
    flush();
  } catch (const Error&) {
  }
}

void ReadingsLog::index(SensorReading reading) {
  auto& dq = recent_[reading.device];
  dq.push_back(std::move(reading));
  if (dq.size() > capacity_) dq.pop_front();
}

void ReadingsLog::append(const SensorReading& reading) {
  buffer_ += to_json(reading).dump();
  buffer_ += '\n';
  index(reading);
  if (++buffered_ >= flush_every_) flush();
}

void ReadingsLog::flush() {
  if (buffer_.empty()) return;
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  out << buffer_;
  out.flush();
  if (!out) throw Error(ErrorCode::kStorageError, "write to '" + path_.string() + "' failed");
  buffer_.clear();
  buffered_ = 0;
}

std::vector<SensorReading> ReadingsLog::recent(std::string_view device, std::size_t limit) const {
  std::vector<SensorReading> out;
  const auto it = recent_.find(device);
  if (it == recent_.end()) return out;
  for (auto r = it->second.rbegin(); r != it->second.rend() && out.size() < limit; ++r) {
    out.push_back(*r);
  }
  return out;
}

nlohmann::ordered_json to_json(const CalibrationRecord& record) {
  nlohmann::ordered_json j;
  j["r0_kohm"] = record.r0;
  j["sample_count"] = record.sample_count;
  j["rs_mean_kohm"] = record.rs_mean;
  j["rs_stddev_kohm"] = record.rs_stddev;
  j["r_load_kohm"] = record.r_load;
  j["t_ms"] = record.t_ms;
  return j;
}

CalibrationRecord calibration_from_json(const nlohmann::json& j) {
  try {
    CalibrationRecord r;
    r.r0 = j.at("r0_kohm").get<double>();
    r.sample_count = j.at("sample_count").get<std::int64_t>();
    r.rs_mean = j.at("rs_mean_kohm").get<double>();
    r.rs_stddev = j.at("rs_stddev_kohm").get<double>();
    r.r_load = j.at("r_load_kohm").get<double>();
    r.t_ms = j.at("t_ms").get<std::int64_t>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kStorageError, std::string("bad calibration record: ") + e.what());
  }
}

CalibrationStore::CalibrationStore(fs::path path) : path_(std::move(path)) {}

std::map<std::string, CalibrationRecord> CalibrationStore::load_all() const {
  std::map<std::string, CalibrationRecord> out;
  if (!fs::exists(path_)) return out;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_file(path_));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kStorageError, "'" + path_.string() + "': " + e.what());
  }
  if (!doc.is_object()) {
    throw Error(ErrorCode::kStorageError, "'" + path_.string() + "' is not a JSON object");
  }
  for (const auto& [device, rec] : doc.items()) out.emplace(device, calibration_from_json(rec));
  return out;
}

void CalibrationStore::save(const std::string& device, const CalibrationRecord& record) {
  auto all = load_all();
  all[device] = record;
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [id, rec] : all) doc[id] = to_json(rec);

  const fs::path tmp = path_.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    out << doc.dump(2) << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::kStorageError, "cannot write '" + tmp.string() + "'");
  }
  std::error_code ec;
  fs::rename(tmp, path_, ec);
  if (ec) {
    throw Error(ErrorCode::kStorageError, "cannot replace '" + path_.string() + "': " + ec.message());
  }
}

CalibrationRecord CalibrationStore::load(std::string_view device) const {
  const auto all = load_all();
  const auto it = all.find(std::string(device));
  if (it == all.end()) {
    throw Error(ErrorCode::kNotCalibrated, "no calibration for '" + std::string(device) + "'");
  }
  return it->second;
}

Storage::Storage(const fs::path& dir)
    : data_dir(ensure_dir(dir)),
      ledger(dir / kLedgerFile),
      readings(dir / kReadingsFile),
      calibration(dir / kCalibrationFile) {}

}  // namespace hearth
