#include "hearth/gateway.hpp"

#include <cmath>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace hearth {

// ---------------------------------------------------------------------------
// Event stream

std::string StreamEvent::data() const {
  nlohmann::ordered_json j;
  j["type"] = type;
  j["payload"] = payload;
  return j.dump();
}

std::optional<StreamEvent> stream_event_for(const LedgerEntry& entry) {
  std::string type;
  if (entry.kind.rfind("alert_", 0) == 0) {
    type = "alert";
  } else if (entry.kind == "mode_changed") {
    type = "mode";
  } else if (entry.kind == "light_command") {
    type = "light";
  } else {
    return std::nullopt;
  }
  nlohmann::ordered_json payload;
  payload["seq"] = entry.seq;
  payload["kind"] = entry.kind;
  payload["t_ms"] = entry.t_ms;
  payload["wall"] = entry.wall_time;
  payload["data"] = entry.payload;
  return StreamEvent{entry.seq, type, std::move(payload)};
}

std::optional<StreamEvent> EventSubscription::next(std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  StreamEvent e = std::move(queue_.front());
  queue_.pop_front();
  return e;
}

bool EventSubscription::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

void EventSubscription::push(const StreamEvent& event) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    // A stalled client loses its oldest readings rather than growing without
    // bound; ledger-backed events can be replayed with Last-Event-ID.
    if (queue_.size() >= kMaxBacklog) queue_.pop_front();
    queue_.push_back(event);
  }
  cv_.notify_one();
}

void EventSubscription::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

std::shared_ptr<EventSubscription> EventHub::subscribe() {
  auto sub = std::make_shared<EventSubscription>();
  std::lock_guard lock(mu_);
  subs_.push_back(sub);
  return sub;
}

void EventHub::publish(const StreamEvent& event) {
  std::lock_guard lock(mu_);
  std::erase_if(subs_, [](const auto& w) { return w.expired(); });
  for (auto& w : subs_) {
    if (auto s = w.lock()) s->push(event);
  }
}

void EventHub::close_all() {
  std::lock_guard lock(mu_);
  for (auto& w : subs_) {
    if (auto s = w.lock()) s->close();
  }
  subs_.clear();
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const StateView& view) {
  nlohmann::ordered_json j;
  j["tick"] = view.tick;
  j["t_ms"] = view.t_ms;
  j["wall_time"] = view.wall_time;
  j["mode"] = to_string(view.mode);
  j["sensors"] = nlohmann::ordered_json::array();
  for (const auto& r : view.latest) {
    auto s = to_json(r);
    s["kind"] = to_string(r.kind);
    j["sensors"].push_back(std::move(s));
  }
  j["lights"] = nlohmann::ordered_json::object();
  for (const auto& [id, state] : view.lights) j["lights"][id] = to_string(state);
  j["active_alerts"] = view.active_alerts;
  j["alerts"] = nlohmann::ordered_json::array();
  for (const auto& a : view.alerts) {
    if (a.state != AlertState::kCleared) j["alerts"].push_back(to_json(a));
  }
  return j;
}

std::int64_t parse_iso8601_utc(const std::string& text) {
  std::tm tm{};
  std::istringstream in(text);
  in >> std::get_time(&tm, "%Y-%m-%dT%H:%M:%S");
  if (in.fail()) throw Error(ErrorCode::kInvalidInput, "'" + text + "' is not ISO-8601 UTC");
  std::string rest;
  in >> rest;
  if (rest != "Z") throw Error(ErrorCode::kInvalidInput, "'" + text + "' must end in Z");
  return static_cast<std::int64_t>(timegm(&tm)) * 1000;
}

std::string iso8601_utc_ms(std::int64_t epoch_ms) {
  std::int64_t secs = epoch_ms / 1000;
  std::int64_t ms = epoch_ms % 1000;
  if (ms < 0) {
    ms += 1000;
    secs -= 1;
  }
  const std::time_t tt = static_cast<std::time_t>(secs);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

namespace {

std::map<std::string, DeviceKind, std::less<>> device_kinds(const std::vector<DeviceDescriptor>& devices) {
  std::map<std::string, DeviceKind, std::less<>> out;
  for (const auto& d : devices) out.emplace(d.id, d.kind());
  return out;
}

std::shared_ptr<Notifier> make_notifier(const GatewayConfig& c) {
  if (c.sms.sink == "file") return std::make_shared<FileNotifier>(c.data_dir / "sms_outbox.jsonl");
  if (c.sms.sink == "webhook") return std::make_shared<WebhookNotifier>(c.sms.webhook_url);
  return std::make_shared<ModemNotifier>(c.data_dir / "modem.log");
}

CommandResult failure(const Error& e) { return {e.code(), e.what(), {}}; }

}  // namespace

CalibrationRecord calibrate_device(const VirtualHome& home, const std::string& device, int samples) {
  const DeviceDescriptor* d = home.find(device);
  if (!d) throw Error(ErrorCode::kUnknownDevice, "no device '" + device + "'");
  const auto* gas = std::get_if<GasDevice>(&d->config);
  if (!gas) throw Error(ErrorCode::kInvalidInput, "device '" + device + "' is not a GAS sensor");
  if (samples < 1) throw Error(ErrorCode::kCalibrationError, "calibration needs at least one sample");

  VirtualHome copy = home;
  std::vector<AdcCode> codes;
  codes.reserve(static_cast<std::size_t>(samples));
  std::int64_t t_ms = copy.now_ms();
  for (int i = 0; i < samples; ++i) {
    t_ms = copy.now_ms();
    for (const auto& r : copy.step(copy.tick_ms())) {
      if (r.device == device) codes.push_back(AdcCode{r.raw});
    }
  }
  return mq2_calibrate(codes, gas->mq2, home.adc(), t_ms);
}

// ---------------------------------------------------------------------------

Gateway::Gateway(GatewayConfig config, GatewayOptions options)
    : config_(std::move(config)),
      options_(std::move(options)),
      epoch_ms_(parse_iso8601_utc(config_.sim_epoch)),
      home_(config_.devices, config_.home),
      engine_(make_rules(config_.rules), device_kinds(config_.devices), config_.initial_mode),
      storage_(config_.data_dir),
      link_(config_.sms.loss_probability, config_.sms.link_seed, config_.sms.latency_min_ms,
            config_.sms.latency_max_ms),
      notifier_(options_.notifier ? options_.notifier : make_notifier(config_)) {
  trace_.seed = home_.seed();
  calibrate_gas_devices();
  publish_snapshot(0);
}

Gateway::~Gateway() {
  stop();
  hub_.close_all();
  try {
    std::lock_guard lock(state_mu_);
    storage_.readings.flush();
  } catch (const std::exception& e) {
    log(std::string("flushing readings failed: ") + e.what());
  }
}

const DeviceDescriptor* Gateway::find_device(std::string_view id) const { return home_.find(id); }

void Gateway::log(const std::string& message) const {
  if (options_.log) {
    options_.log(message);
  } else {
    std::cerr << "hearth: " << message << '\n';
  }
}

std::string Gateway::wall_time(std::int64_t t_ms) const {
  if (options_.clock == WallClock::kSimulated) return iso8601_utc_ms(epoch_ms_ + t_ms);
  const auto now = std::chrono::system_clock::now();
  return iso8601_utc_ms(
      std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count());
}

void Gateway::calibrate_gas_devices() {
  for (const auto& d : config_.devices) {
    const auto* gas = std::get_if<GasDevice>(&d.config);
    if (!gas) continue;
    CalibrationRecord rec;
    try {
      rec = storage_.calibration.load(d.id);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotCalibrated) throw;
      rec = calibrate_device(home_, d.id, config_.calibration_samples);
      storage_.calibration.save(d.id, rec);
      nlohmann::json payload;
      payload["device"] = d.id;
      payload["record"] = to_json(rec);
      record("calibration", std::move(payload), home_.now_ms());
    }
    engine_.set_gas_calibration(d.id, GasCalibration{rec.r0, gas->lpg, gas->smoke});
  }
}

std::uint64_t Gateway::record(const std::string& kind, nlohmann::json payload, std::int64_t t_ms) {
  LedgerEntry entry;
  entry.kind = kind;
  entry.payload = std::move(payload);
  entry.t_ms = t_ms;
  entry.wall_time = wall_time(t_ms);
  entry.seq = storage_.ledger.append(entry.kind, entry.payload, t_ms, entry.wall_time);
  if (auto e = stream_event_for(entry)) hub_.publish(*e);
  return entry.seq;
}

void Gateway::set_scenario(Scenario scenario) {
  std::lock_guard lock(state_mu_);
  for (const auto& s : scenario.stimuli) home_.validate(s);
  std::stable_sort(scenario.stimuli.begin(), scenario.stimuli.end(),
                   [](const Stimulus& a, const Stimulus& b) { return a.t_ms < b.t_ms; });
  scenario_ = std::move(scenario);
  next_stimulus_ = 0;
  // Stimuli already in the past take effect on the next tick.
}

CommandResult Gateway::apply(const Command& command, std::int64_t t_ms) {
  try {
    if (const auto* c = std::get_if<SetLight>(&command)) {
      if (!home_.find(c->device)) throw Error(ErrorCode::kNotFound, "no device '" + c->device + "'");
      auto change = home_.apply_command({c->device, c->on});
      const LightState state = home_.switch_on(c->device) ? LightState::kOn : LightState::kOff;
      if (change) {
        nlohmann::json payload;
        payload["device"] = c->device;
        payload["state"] = to_string(state);
        record("light_command", std::move(payload), t_ms);
        if (options_.record_trace) trace_.actuator_changes.push_back(*change);
      }
      nlohmann::ordered_json body;
      body["device"] = c->device;
      body["state"] = to_string(state);
      body["changed"] = change.has_value();
      return {std::nullopt, "", std::move(body)};
    }
    if (const auto* c = std::get_if<SetMode>(&command)) {
      const bool changed = engine_.set_mode(c->mode);
      if (changed) {
        nlohmann::json payload;
        payload["mode"] = to_string(c->mode);
        record("mode_changed", std::move(payload), t_ms);
      }
      nlohmann::ordered_json body;
      body["mode"] = to_string(c->mode);
      body["changed"] = changed;
      return {std::nullopt, "", std::move(body)};
    }
    const auto& c = std::get<AckAlert>(command);
    if (auto event = engine_.acknowledge(c.alert_id, t_ms)) {
      record(std::string("alert_") + std::string(to_string(event->type)), to_json(event->alert), t_ms);
    }
    return {std::nullopt, "", nlohmann::ordered_json(to_json(*engine_.find(c.alert_id)))};
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kStorageError) throw;
    return failure(e);
  }
}

void Gateway::tick() {
  std::deque<Pending> batch;
  {
    std::lock_guard lock(cmd_mu_);
    batch.swap(commands_);
  }

  std::unique_lock lock(state_mu_);
  if (fatal_) {
    for (auto& p : batch) p.promise.set_value({ErrorCode::kStorageError, *fatal_, {}});
    throw Error(ErrorCode::kStorageError, *fatal_);
  }

  const std::int64_t t = home_.now_ms();
  try {
    for (auto& p : batch) p.result = apply(p.command, t);

    while (next_stimulus_ < scenario_.stimuli.size() && scenario_.stimuli[next_stimulus_].t_ms <= t) {
      home_.apply_stimulus(scenario_.stimuli[next_stimulus_++]);
    }

    auto readings = home_.step(home_.tick_ms());
    for (const auto& r : readings) {
      storage_.readings.append(r);
      hub_.publish(StreamEvent{std::nullopt, "reading", to_json(r)});
    }
    if (options_.record_trace) {
      trace_.readings.insert(trace_.readings.end(), readings.begin(), readings.end());
    }

    for (const auto& event : engine_.process(readings)) {
      record(std::string("alert_") + std::string(to_string(event.type)), to_json(event.alert), t);
      if (event.type != AlertEventType::kRaised) continue;
      SmsMessage msg = render_sms(event.alert, config_.home_name, config_.sms.destination);
      nlohmann::json payload;
      payload["dedupe_key"] = msg.dedupe_key;
      payload["destination"] = msg.destination;
      payload["alert_id"] = msg.alert_id;
      payload["body"] = msg.body;
      if (queue_.submit(std::move(msg), t)) record("sms_queued", std::move(payload), t);
    }

    for (const auto& d : queue_.pump(link_, config_.sms.retry, t, *notifier_)) {
      record(std::string("sms_") + std::string(to_string(d.type)), to_json(d), t);
    }
    if (queue_.messages().size() > 10000) queue_.prune_terminal();

    for (const auto& message : engine_.take_diagnostics()) log(message);

    last_readings_ = std::move(readings);
    ++ticks_;
    publish_snapshot(t);
  } catch (const std::exception& e) {
    const auto* err = dynamic_cast<const Error*>(&e);
    const ErrorCode code = err ? err->code() : ErrorCode::kInvalidInput;
    if (code == ErrorCode::kStorageError) {
      fatal_ = e.what();
      log(std::string("halting: ") + e.what());
    }
    lock.unlock();
    for (auto& p : batch) p.promise.set_value({code, e.what(), {}});
    throw;
  }
  lock.unlock();
  for (auto& p : batch) p.promise.set_value(std::move(p.result));
}

void Gateway::run_ticks(std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i) tick();
}

void Gateway::publish_snapshot(std::int64_t t_ms) {
  auto view = std::make_shared<StateView>();
  view->tick = ticks_;
  view->t_ms = t_ms;
  view->wall_time = wall_time(t_ms);
  view->mode = engine_.mode();
  view->latest = last_readings_;
  for (const auto& d : home_.devices()) {
    if (d.kind() == DeviceKind::kLight) {
      view->lights[d.id] = home_.switch_on(d.id) ? LightState::kOn : LightState::kOff;
    }
  }
  view->alerts = engine_.alerts();
  view->active_alerts = engine_.active_count();
  std::lock_guard lock(snap_mu_);
  snapshot_ = std::move(view);
}

std::shared_ptr<const StateView> Gateway::state() const {
  std::lock_guard lock(snap_mu_);
  return snapshot_;
}

std::optional<std::string> Gateway::fatal_error() const {
  std::lock_guard lock(state_mu_);
  return fatal_;
}

std::future<CommandResult> Gateway::submit(Command command) {
  std::lock_guard lock(cmd_mu_);
  commands_.push_back(Pending{std::move(command), {}, {}});
  return commands_.back().promise.get_future();
}

CommandResult Gateway::execute(Command command, std::chrono::milliseconds timeout) {
  if (auto f = fatal_error()) return {ErrorCode::kStorageError, *f, {}};
  auto future = submit(std::move(command));
  if (future.wait_for(timeout) != std::future_status::ready) {
    return {ErrorCode::kInvalidInput, "timeout", {}};
  }
  return future.get();
}

void Gateway::start(double speed, std::optional<std::int64_t> max_ticks) {
  if (!(speed > 0.0) || !std::isfinite(speed)) {
    throw Error(ErrorCode::kInvalidInput, "speed must be a positive number");
  }
  if (running_) throw Error(ErrorCode::kInvalidInput, "gateway already running");
  if (thread_.joinable()) thread_.join();
  stop_requested_ = false;
  running_ = true;
  thread_ = std::thread([this, speed, max_ticks] { loop(speed, max_ticks); });
}

void Gateway::loop(double speed, std::optional<std::int64_t> max_ticks) {
  using clock = std::chrono::steady_clock;
  const auto period = std::chrono::duration_cast<clock::duration>(
      std::chrono::duration<double, std::milli>(static_cast<double>(home_.tick_ms()) / speed));
  auto deadline = clock::now();
  std::int64_t done = 0;
  while (!stop_requested_ && (!max_ticks || done < *max_ticks)) {
    try {
      tick();
    } catch (const std::exception& e) {
      log(std::string("tick loop stopped: ") + e.what());
      break;
    }
    ++done;
    deadline += period;
    std::unique_lock lock(loop_mu_);
    loop_cv_.wait_until(lock, deadline, [&] { return stop_requested_.load(); });
  }
  {
    std::lock_guard lock(state_mu_);
    try {
      storage_.readings.flush();
    } catch (const std::exception& e) {
      log(std::string("flushing readings failed: ") + e.what());
    }
  }
  running_ = false;
  loop_cv_.notify_all();
}

void Gateway::stop() {
  {
    std::lock_guard lock(loop_mu_);
    stop_requested_ = true;
  }
  loop_cv_.notify_all();
  if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
}

void Gateway::wait() {
  if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
}

std::vector<SensorReading> Gateway::recent_readings(std::string_view device, std::size_t limit) const {
  std::lock_guard lock(state_mu_);
  return storage_.readings.recent(device, limit);
}

std::vector<StreamEvent> Gateway::ledger_events_after(std::uint64_t after_seq) const {
  std::vector<StreamEvent> out;
  for (const auto& entry : recover_ledger(storage_.ledger.path()).entries) {
    if (entry.seq <= after_seq) continue;
    if (auto e = stream_event_for(entry)) out.push_back(std::move(*e));
  }
  return out;
}

Trace Gateway::trace() const {
  std::lock_guard lock(state_mu_);
  return trace_;
}

std::vector<SmsMessage> Gateway::sms_messages() const {
  std::lock_guard lock(state_mu_);
  return queue_.messages();
}

std::filesystem::path Gateway::ledger_path() const { return storage_.ledger.path(); }

}  // namespace hearth
