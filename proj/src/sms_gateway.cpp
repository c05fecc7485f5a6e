#include "hearth/sms_gateway.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include <httplib.h>

#include "hearth/error.hpp"

namespace hearth {
namespace {

std::string sanitize_body(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (const char c : text) {
    const auto u = static_cast<unsigned char>(c);
    if (c == '\r' || c == '\n' || c == '\t') {
      out.push_back(' ');
    } else if (u < 0x20 || u > 0x7E) {
      out.push_back('?');
    } else {
      out.push_back(c);
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(SmsState state) {
  switch (state) {
    case SmsState::kQueued: return "QUEUED";
    case SmsState::kSending: return "SENDING";
    case SmsState::kDelivered: return "DELIVERED";
    case SmsState::kFailed: return "FAILED";
  }
  return "?";
}

nlohmann::ordered_json to_json(const SmsMessage& msg) {
  nlohmann::ordered_json j;
  j["dedupe_key"] = msg.dedupe_key;
  j["destination"] = msg.destination;
  j["body"] = msg.body;
  j["alert_id"] = msg.alert_id;
  j["attempts"] = msg.attempts;
  j["state"] = to_string(msg.state);
  return j;
}

bool is_e164(std::string_view destination) {
  static const std::regex pattern(R"(^\+[1-9][0-9]{1,14}$)");
  return std::regex_match(destination.begin(), destination.end(), pattern);
}

SmsMessage render_sms(const Alert& alert, std::string_view home_name,
                      std::string_view destination) {
  if (!is_e164(destination)) {
    throw Error(ErrorCode::kInvalidDestination,
                "'" + std::string(destination) + "' is not an E.164 number");
  }
  if (alert.state != AlertState::kActive) {
    throw Error(ErrorCode::kInvalidInput,
                "alert " + std::to_string(alert.id) + " is " + std::string(to_string(alert.state)));
  }
  std::string body = "ALERT " + std::string(to_string(alert.kind)) + " " + alert.device + " at " +
                     std::to_string(alert.raised_at_ms) + "ms: " + alert.detail;
  if (!home_name.empty()) body += " [" + std::string(home_name) + "]";
  body = sanitize_body(body);
  if (body.size() > kSmsMaxBody) body.resize(kSmsMaxBody);

  SmsMessage msg;
  msg.dedupe_key = std::to_string(alert.id) + ":" + std::string(to_string(alert.kind));
  msg.destination = std::string(destination);
  msg.body = std::move(body);
  msg.alert_id = alert.id;
  return msg;
}

std::vector<AtExchange> encode_at_transcript(const SmsMessage& msg, int reference) {
  return {
      {"AT", {"OK"}},
      {"AT+CMGF=1", {"OK"}},
      {"AT+CMGS=\"" + msg.destination + "\"", {">"}},
      {msg.body, {}},
      {std::string(kCtrlZ), {"+CMGS: " + std::to_string(reference), "OK"}},
  };
}

std::vector<std::string> ModemEmulator::feed(std::string_view line) {
  static const std::regex cmgs(R"re(^AT\+CMGS="(\+?[0-9]{1,20})"$)re");

  switch (phase_) {
    case Phase::kCommand: {
      if (line == "AT") return {"OK"};
      if (line == "AT+CMGF=1") {
        text_mode_ = true;
        return {"OK"};
      }
      if (line == "AT+CMGF=0") {
        text_mode_ = false;
        return {"OK"};
      }
      std::match_results<std::string_view::const_iterator> m;
      if (std::regex_match(line.begin(), line.end(), m, cmgs)) {
        if (!text_mode_) return {"ERROR"};
        destination_ = m[1].str();
        body_.clear();
        phase_ = Phase::kBody;
        return {">"};
      }
      return {"ERROR"};
    }
    case Phase::kBody: {
      // The body may carry its terminating Ctrl-Z inline.
      const auto z = line.find(kCtrlZ);
      body_ = std::string(line.substr(0, z));
      if (z == std::string_view::npos) {
        phase_ = Phase::kAwaitCtrlZ;
        return {};
      }
      [[fallthrough]];
    }
    case Phase::kAwaitCtrlZ: {
      if (phase_ == Phase::kAwaitCtrlZ && line != kCtrlZ) {
        phase_ = Phase::kCommand;
        return {"ERROR"};
      }
      phase_ = Phase::kCommand;
      const int ref = next_reference_;
      next_reference_ = next_reference_ % 255 + 1;
      sent_.push_back({destination_, body_, ref});
      return {"+CMGS: " + std::to_string(ref), "OK"};
    }
  }
  return {"ERROR"};
}

std::vector<ReceivedSms> ModemEmulator::take_sent() {
  std::vector<ReceivedSms> out;
  out.swap(sent_);
  return out;
}

ReceivedSms parse_at_transcript(std::span<const std::string> command_lines) {
  ModemEmulator modem;
  for (const auto& line : command_lines) {
    const auto responses = modem.feed(line);
    if (std::find(responses.begin(), responses.end(), "ERROR") != responses.end()) {
      throw Error(ErrorCode::kInvalidInput, "modem rejected '" + line + "'");
    }
  }
  auto sent = modem.take_sent();
  if (sent.size() != 1) {
    throw Error(ErrorCode::kInvalidInput, "transcript did not submit exactly one message");
  }
  return sent.front();
}

std::string render_transcript_line(bool host_to_modem, std::string_view line) {
  std::string out = host_to_modem ? ">> " : "<< ";
  if (line == kCtrlZ) {
    out += "<CTRL+Z>";
  } else {
    out += line;
  }
  return out;
}

LinkModel::LinkModel(double loss_probability, std::uint64_t seed, std::int64_t latency_min_ms,
                     std::int64_t latency_max_ms)
    : loss_probability_(loss_probability),
      latency_min_ms_(latency_min_ms),
      latency_max_ms_(latency_max_ms),
      rng_(seed) {
  if (!(loss_probability >= 0.0 && loss_probability <= 1.0)) {
    throw Error(ErrorCode::kInvalidInput, "loss probability must be within [0, 1]");
  }
  if (latency_min_ms < 0 || latency_max_ms < latency_min_ms) {
    throw Error(ErrorCode::kInvalidInput, "latency range must satisfy 0 <= min <= max");
  }
}

bool LinkModel::draw_loss() {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng_) < loss_probability_;
}

std::int64_t LinkModel::draw_latency() {
  if (latency_max_ms_ == latency_min_ms_) return latency_min_ms_;
  std::uniform_int_distribution<std::int64_t> d(latency_min_ms_, latency_max_ms_);
  return d(rng_);
}

void RetryPolicy::validate() const {
  if (max_retries < 0) throw Error(ErrorCode::kInvalidInput, "max_retries must be >= 0");
  if (base_ms <= 0) throw Error(ErrorCode::kInvalidInput, "backoff base must be positive");
  if (!(multiplier >= 1.0)) throw Error(ErrorCode::kInvalidInput, "backoff multiplier must be >= 1");
}

std::int64_t RetryPolicy::retry_offset(int failed_attempts) const {
  return std::llround(static_cast<double>(base_ms) *
                      std::pow(multiplier, std::max(0, failed_attempts - 1)));
}

ModemNotifier::ModemNotifier(std::optional<std::filesystem::path> transcript_log)
    : log_path_(std::move(transcript_log)) {
  if (log_path_) {
    log_.open(*log_path_, std::ios::app);
    if (!log_) {
      throw Error(ErrorCode::kStorageError, "cannot open modem log '" + log_path_->string() + "'");
    }
  }
}

bool ModemNotifier::deliver(const SmsMessage& msg, int /*attempt*/) {
  const int ref = next_reference_;
  next_reference_ = next_reference_ % 255 + 1;
  bool ok = true;
  for (const auto& ex : encode_at_transcript(msg, ref)) {
    transcript_.push_back(render_transcript_line(true, ex.command));
    for (const auto& resp : modem_.feed(ex.command)) {
      transcript_.push_back(render_transcript_line(false, resp));
      if (resp == "ERROR") ok = false;
    }
    if (!ok) break;
  }
  if (log_.is_open()) {
    for (const auto& line : transcript_) log_ << line << '\n';
    log_.flush();
  }
  transcript_.clear();
  auto sent = modem_.take_sent();
  if (!ok || sent.empty()) return false;
  sent_.insert(sent_.end(), sent.begin(), sent.end());
  return true;
}

FileNotifier::FileNotifier(std::filesystem::path path) : path_(std::move(path)) {}

nlohmann::ordered_json webhook_payload(const SmsMessage& msg, int attempt) {
  nlohmann::ordered_json j;
  j["dedupe_key"] = msg.dedupe_key;
  j["destination"] = msg.destination;
  j["body"] = msg.body;
  j["attempt"] = attempt;
  return j;
}

bool FileNotifier::deliver(const SmsMessage& msg, int attempt) {
  std::ofstream out(path_, std::ios::app);
  if (!out) return false;
  out << webhook_payload(msg, attempt).dump() << '\n';
  out.flush();
  return static_cast<bool>(out);
}

WebhookNotifier::WebhookNotifier(std::string url, int timeout_ms) : timeout_ms_(timeout_ms) {
  static const std::regex pattern(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern)) {
    throw Error(ErrorCode::kInvalidInput, "webhook url must look like http://host[:port]/path");
  }
  origin_ = m[1].str();
  path_ = m[2].matched ? m[2].str() : "/";
}

bool WebhookNotifier::deliver(const SmsMessage& msg, int attempt) {
  httplib::Client client(origin_);
  const auto sec = timeout_ms_ / 1000;
  const auto usec = (timeout_ms_ % 1000) * 1000;
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
  const auto res = client.Post(path_, webhook_payload(msg, attempt).dump(), "application/json");
  return res && res->status >= 200 && res->status < 300;
}

std::string_view to_string(DeliveryEventType type) {
  switch (type) {
    case DeliveryEventType::kAttempt: return "attempt";
    case DeliveryEventType::kDelivered: return "delivered";
    case DeliveryEventType::kFailed: return "failed";
  }
  return "?";
}

nlohmann::ordered_json to_json(const DeliveryEvent& event) {
  nlohmann::ordered_json j;
  j["type"] = to_string(event.type);
  j["dedupe_key"] = event.dedupe_key;
  j["attempt"] = event.attempt;
  j["t_ms"] = event.t_ms;
  if (event.type == DeliveryEventType::kDelivered) j["latency_ms"] = event.latency_ms;
  return j;
}

bool SmsQueue::submit(SmsMessage msg, std::int64_t now_ms) {
  const bool in_flight = std::any_of(messages_.begin(), messages_.end(), [&](const SmsMessage& m) {
    return m.dedupe_key == msg.dedupe_key &&
           (m.state == SmsState::kQueued || m.state == SmsState::kSending);
  });
  if (in_flight) return false;
  msg.state = SmsState::kQueued;
  msg.attempts = 0;
  msg.queued_at_ms = now_ms;
  msg.first_attempt_ms = -1;
  msg.next_due_ms = now_ms;
  messages_.push_back(std::move(msg));
  return true;
}

std::vector<DeliveryEvent> SmsQueue::pump(LinkModel& link, const RetryPolicy& policy,
                                          std::int64_t now_ms, Notifier& sink) {
  std::vector<DeliveryEvent> events;
  for (SmsMessage& m : messages_) {
    if (m.state != SmsState::kQueued || m.next_due_ms > now_ms) continue;
    m.state = SmsState::kSending;
    ++m.attempts;
    if (m.first_attempt_ms < 0) m.first_attempt_ms = now_ms;
    events.push_back({DeliveryEventType::kAttempt, m.dedupe_key, m.attempts, now_ms, 0});

    const bool lost = link.draw_loss();
    if (!lost && sink.deliver(m, m.attempts)) {
      m.state = SmsState::kDelivered;
      const std::int64_t latency = link.draw_latency();
      events.push_back(
          {DeliveryEventType::kDelivered, m.dedupe_key, m.attempts, now_ms + latency, latency});
    } else if (m.attempts >= policy.max_retries + 1) {
      m.state = SmsState::kFailed;
      events.push_back({DeliveryEventType::kFailed, m.dedupe_key, m.attempts, now_ms, 0});
    } else {
      m.state = SmsState::kQueued;
      m.next_due_ms = std::max(m.first_attempt_ms + policy.retry_offset(m.attempts), now_ms + 1);
    }
  }
  return events;
}

std::size_t SmsQueue::pending() const {
  return static_cast<std::size_t>(
      std::count_if(messages_.begin(), messages_.end(), [](const SmsMessage& m) {
        return m.state == SmsState::kQueued || m.state == SmsState::kSending;
      }));
}

std::optional<std::int64_t> SmsQueue::next_due_ms() const {
  std::optional<std::int64_t> best;
  for (const auto& m : messages_) {
    if (m.state != SmsState::kQueued) continue;
    if (!best || m.next_due_ms < *best) best = m.next_due_ms;
  }
  return best;
}

void SmsQueue::prune_terminal() {
  std::erase_if(messages_, [](const SmsMessage& m) {
    return m.state == SmsState::kDelivered || m.state == SmsState::kFailed;
  });
}

}  // namespace hearth
