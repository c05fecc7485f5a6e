#pragma once

// SMS notification path: alert rendering, an emulated text-mode AT modem, and
// a retrying at-least-once delivery queue over a lossy simulated link.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hearth/alert_engine.hpp"

namespace hearth {

inline constexpr std::size_t kSmsMaxBody = 160;
inline constexpr std::string_view kCtrlZ = "\x1A";

enum class SmsState { kQueued, kSending, kDelivered, kFailed };

std::string_view to_string(SmsState state);

struct SmsMessage {
  std::string dedupe_key;  // "<alert id>:<KIND>"
  std::string destination;
  std::string body;
  std::uint64_t alert_id = 0;
  int attempts = 0;
  SmsState state = SmsState::kQueued;
  std::int64_t queued_at_ms = 0;
  std::int64_t first_attempt_ms = -1;
  std::int64_t next_due_ms = 0;
};

nlohmann::ordered_json to_json(const SmsMessage& msg);

// Strict E.164: '+' then 2..15 digits, no leading zero.
bool is_e164(std::string_view destination);

// "ALERT <KIND> <device> at <t_ms>ms: <detail> [<home>]", cut to 160 chars.
// Throws InvalidDestination for a non-E.164 destination and InvalidInput for
// an alert that is not ACTIVE.
SmsMessage render_sms(const Alert& alert, std::string_view home_name,
                      std::string_view destination);

// ---------------------------------------------------------------------------
// AT command transcript

struct AtExchange {
  std::string command;                 // host -> modem
  std::vector<std::string> responses;  // modem -> host, expected
};

// AT, AT+CMGF=1, AT+CMGS="<dest>", <body>, <Ctrl-Z>. The final exchange
// expects "+CMGS: <reference>" then "OK".
std::vector<AtExchange> encode_at_transcript(const SmsMessage& msg, int reference = 1);

struct ReceivedSms {
  std::string destination;
  std::string body;
  int reference = 0;

  bool operator==(const ReceivedSms&) const = default;
};

// Text-mode modem emulator. Feed it host lines one at a time; it answers with
// the modem's response lines and records each completed submission.
class ModemEmulator {
 public:
  std::vector<std::string> feed(std::string_view line);
  std::vector<ReceivedSms> take_sent();

 private:
  enum class Phase { kCommand, kBody, kAwaitCtrlZ };

  Phase phase_ = Phase::kCommand;
  bool text_mode_ = false;
  std::string destination_;
  std::string body_;
  int next_reference_ = 1;
  std::vector<ReceivedSms> sent_;
};

// Drives the command lines of a transcript through a fresh emulator. Throws
// InvalidInput if the modem rejects any line or sends nothing.
ReceivedSms parse_at_transcript(std::span<const std::string> command_lines);

// Transcript log rendering: ">> " host->modem, "<< " modem->host. Ctrl-Z is
// written as "<CTRL+Z>".
std::string render_transcript_line(bool host_to_modem, std::string_view line);

// ---------------------------------------------------------------------------
// Link, retry policy, sinks

class LinkModel {
 public:
  // Throws InvalidInput unless p in [0, 1] and 0 <= latency_min <= latency_max.
  LinkModel(double loss_probability, std::uint64_t seed, std::int64_t latency_min_ms = 0,
            std::int64_t latency_max_ms = 0);

  double loss_probability() const { return loss_probability_; }
  bool draw_loss();
  std::int64_t draw_latency();

 private:
  double loss_probability_;
  std::int64_t latency_min_ms_;
  std::int64_t latency_max_ms_;
  std::mt19937_64 rng_;
};

struct RetryPolicy {
  int max_retries = 5;
  std::int64_t base_ms = 1000;
  double multiplier = 2.0;

  void validate() const;
  // Offset from the first attempt at which attempt n+1 is due, given n failed
  // attempts: base * multiplier^(n-1).
  std::int64_t retry_offset(int failed_attempts) const;
};

class Notifier {
 public:
  virtual ~Notifier() = default;
  // Hands the message to the far end. False counts as a failed attempt.
  virtual bool deliver(const SmsMessage& msg, int attempt) = 0;
};

// Default sink: runs each message through the AT modem emulator and appends
// the exchange to a transcript log (if a path is given).
class ModemNotifier : public Notifier {
 public:
  explicit ModemNotifier(std::optional<std::filesystem::path> transcript_log = std::nullopt);
  bool deliver(const SmsMessage& msg, int attempt) override;
  const std::vector<ReceivedSms>& sent() const { return sent_; }
  const std::vector<std::string>& transcript() const { return transcript_; }

 private:
  ModemEmulator modem_;
  int next_reference_ = 1;
  std::optional<std::filesystem::path> log_path_;
  std::ofstream log_;
  std::vector<ReceivedSms> sent_;
  std::vector<std::string> transcript_;
};

// Appends {dedupe_key, destination, body, attempt} JSON lines to a file.
class FileNotifier : public Notifier {
 public:
  explicit FileNotifier(std::filesystem::path path);
  bool deliver(const SmsMessage& msg, int attempt) override;

 private:
  std::filesystem::path path_;
};

// HTTP POST of {dedupe_key, destination, body, attempt}. Any 2xx is success.
class WebhookNotifier : public Notifier {
 public:
  // url: http://host[:port]/path
  explicit WebhookNotifier(std::string url, int timeout_ms = 2000);
  bool deliver(const SmsMessage& msg, int attempt) override;

 private:
  std::string origin_;
  std::string path_;
  int timeout_ms_;
};

nlohmann::ordered_json webhook_payload(const SmsMessage& msg, int attempt);

// ---------------------------------------------------------------------------
// Queue

enum class DeliveryEventType { kAttempt, kDelivered, kFailed };

std::string_view to_string(DeliveryEventType type);

struct DeliveryEvent {
  DeliveryEventType type = DeliveryEventType::kAttempt;
  std::string dedupe_key;
  int attempt = 0;
  std::int64_t t_ms = 0;
  std::int64_t latency_ms = 0;  // delivered only
};

nlohmann::ordered_json to_json(const DeliveryEvent& event);

// Single-owner queue pumped by the tick loop. Terminal messages are kept until
// prune_terminal() so their attempt counts stay inspectable.
class SmsQueue {
 public:
  // Appends as QUEUED, due at now_ms. No-op (returns false) while a message
  // with the same dedupe key is still QUEUED or SENDING.
  bool submit(SmsMessage msg, std::int64_t now_ms);

  // Attempts every message due at now_ms, at most once each. A lost attempt is
  // rescheduled at first_attempt + policy.retry_offset(attempts); after
  // max_retries + 1 attempts the message is FAILED.
  std::vector<DeliveryEvent> pump(LinkModel& link, const RetryPolicy& policy, std::int64_t now_ms,
                                  Notifier& sink);

  const std::vector<SmsMessage>& messages() const { return messages_; }
  std::size_t pending() const;
  // Earliest due time among pending messages.
  std::optional<std::int64_t> next_due_ms() const;
  void prune_terminal();

 private:
  std::vector<SmsMessage> messages_;
};

}  // namespace hearth
