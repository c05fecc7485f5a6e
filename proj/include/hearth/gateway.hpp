#pragma once

// The gateway ties the modules together around one tick loop:
//
//   commands -> stimuli -> sample -> store -> alert engine -> SMS queue -> snapshot
//
// All mutation happens on the thread that calls tick(). Other threads read
// immutable snapshots, subscribe to the event hub, or hand commands over the
// FIFO command channel and wait for the tick that applies them.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "hearth/alert_engine.hpp"
#include "hearth/config.hpp"
#include "hearth/error.hpp"
#include "hearth/sms_gateway.hpp"
#include "hearth/storage.hpp"
#include "hearth/virtual_home.hpp"

namespace hearth {

// ---------------------------------------------------------------------------
// Event stream

struct StreamEvent {
  std::optional<std::uint64_t> seq;  // ledger sequence; readings carry none
  std::string type;                  // reading | alert | mode | light
  nlohmann::ordered_json payload;

  // {"type": ..., "payload": ...}
  std::string data() const;
};

// Ledger entries that the dashboard stream carries (alerts, mode, lights).
std::optional<StreamEvent> stream_event_for(const LedgerEntry& entry);

class EventSubscription {
 public:
  static constexpr std::size_t kMaxBacklog = 10000;

  // Waits up to `timeout` for the next event. nullopt on timeout or close.
  std::optional<StreamEvent> next(std::chrono::milliseconds timeout);
  bool closed() const;

 private:
  friend class EventHub;
  void push(const StreamEvent& event);
  void close();

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<StreamEvent> queue_;
  bool closed_ = false;
};

class EventHub {
 public:
  std::shared_ptr<EventSubscription> subscribe();
  void publish(const StreamEvent& event);
  // Closes every subscription (server shutdown).
  void close_all();

 private:
  std::mutex mu_;
  std::vector<std::weak_ptr<EventSubscription>> subs_;
};

// ---------------------------------------------------------------------------
// Commands

struct SetLight {
  std::string device;
  bool on = false;
};
struct SetMode {
  HomeMode mode = HomeMode::kHome;
};
struct AckAlert {
  std::uint64_t alert_id = 0;
};
using Command = std::variant<SetLight, SetMode, AckAlert>;

struct CommandResult {
  std::optional<ErrorCode> error;
  std::string message;
  nlohmann::ordered_json body;

  bool ok() const { return !error; }
};

// ---------------------------------------------------------------------------

struct StateView {
  std::uint64_t tick = 0;  // completed ticks
  std::int64_t t_ms = 0;   // sample time of the last completed tick
  std::string wall_time;
  HomeMode mode = HomeMode::kHome;
  std::vector<SensorReading> latest;  // one per device, registry order
  std::map<std::string, LightState> lights;
  std::vector<Alert> alerts;
  std::size_t active_alerts = 0;
};

nlohmann::ordered_json to_json(const StateView& view);

// "2020-01-01T00:00:00.100Z"
std::string iso8601_utc_ms(std::int64_t epoch_ms);
// Milliseconds since the Unix epoch. Accepts "YYYY-MM-DDTHH:MM:SSZ".
std::int64_t parse_iso8601_utc(const std::string& text);

enum class WallClock { kSystem, kSimulated };

struct GatewayOptions {
  // Simulated wall time is sim_epoch + t_ms, which keeps headless runs
  // byte-reproducible.
  WallClock clock = WallClock::kSystem;
  bool record_trace = false;
  // Overrides the sink named in the config.
  std::shared_ptr<Notifier> notifier;
  // Receives diagnostics (defaults to stderr).
  std::function<void(const std::string&)> log;
};

// Samples `samples` ticks of clean air from a copy of `home` (the original is
// untouched) and runs the MQ-2 calibration. Throws InvalidInput for a non-gas
// device and CalibrationError for samples < 1.
CalibrationRecord calibrate_device(const VirtualHome& home, const std::string& device, int samples);

class Gateway {
 public:
  Gateway(GatewayConfig config, GatewayOptions options = {});
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const GatewayConfig& config() const { return config_; }
  const std::vector<DeviceDescriptor>& devices() const { return config_.devices; }
  const DeviceDescriptor* find_device(std::string_view id) const;

  // Stimuli are applied when the clock reaches their t_ms.
  void set_scenario(Scenario scenario);

  // One tick on the calling thread. Must not be called while start() runs.
  // Rethrows StorageError after halting the gateway.
  void tick();
  void run_ticks(std::int64_t n);

  // Background tick loop; one tick every tick_ms / speed of wall time. Stops
  // after max_ticks when given.
  void start(double speed, std::optional<std::int64_t> max_ticks = std::nullopt);
  void stop();
  // Blocks until the background loop ends.
  void wait();
  bool running() const { return running_; }
  std::optional<std::string> fatal_error() const;

  // FIFO command channel: the command is applied at the start of the next
  // tick and the future resolves once that tick has sampled.
  std::future<CommandResult> submit(Command command);
  // submit() and wait; a timeout reports kInvalidInput with "timeout".
  CommandResult execute(Command command, std::chrono::milliseconds timeout);

  std::shared_ptr<const StateView> state() const;
  std::vector<SensorReading> recent_readings(std::string_view device, std::size_t limit) const;
  // Stream events for ledger entries with seq > after_seq.
  std::vector<StreamEvent> ledger_events_after(std::uint64_t after_seq) const;
  EventHub& events() { return hub_; }

  // Copies; safe from the ticking thread or after the loop stops.
  Trace trace() const;
  std::vector<SmsMessage> sms_messages() const;
  std::filesystem::path ledger_path() const;

 private:
  struct Pending {
    Command command;
    std::promise<CommandResult> promise;
    CommandResult result;
  };

  std::string wall_time(std::int64_t t_ms) const;
  void calibrate_gas_devices();
  std::uint64_t record(const std::string& kind, nlohmann::json payload, std::int64_t t_ms);
  CommandResult apply(const Command& command, std::int64_t t_ms);
  void publish_snapshot(std::int64_t t_ms);
  void loop(double speed, std::optional<std::int64_t> max_ticks);
  void log(const std::string& message) const;

  GatewayConfig config_;
  GatewayOptions options_;
  std::int64_t epoch_ms_ = 0;

  // Tick-thread state.
  mutable std::mutex state_mu_;
  VirtualHome home_;
  AlertEngine engine_;
  Storage storage_;
  SmsQueue queue_;
  LinkModel link_;
  std::shared_ptr<Notifier> notifier_;
  Scenario scenario_;
  std::size_t next_stimulus_ = 0;
  std::uint64_t ticks_ = 0;
  Trace trace_;
  std::vector<SensorReading> last_readings_;
  std::optional<std::string> fatal_;

  std::mutex cmd_mu_;
  std::deque<Pending> commands_;

  mutable std::mutex snap_mu_;
  std::shared_ptr<const StateView> snapshot_;

  EventHub hub_;

  std::thread thread_;
  std::atomic<bool> running_{false};
  std::atomic<bool> stop_requested_{false};
  std::mutex loop_mu_;
  std::condition_variable loop_cv_;
};

}  // namespace hearth
