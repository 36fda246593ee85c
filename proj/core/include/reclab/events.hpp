#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "reclab/ids.hpp"

namespace reclab {

using Tick = std::int64_t;

enum class EventKind : std::uint8_t { Like, Dislike, Reciprocate };

std::string_view to_string(EventKind kind) noexcept;
EventKind parse_event_kind(std::string_view text);

/// +1 for positive expressions (LIKE, RECIPROCATE), -1 for DISLIKE.
constexpr int polarity(EventKind kind) noexcept { return kind == EventKind::Dislike ? -1 : 1; }

/// One timestamped directed expression.
struct PreferenceEvent {
  Tick timestamp = 0;
  UserId actor;
  UserId target;
  EventKind kind = EventKind::Like;

  friend auto operator<=>(const PreferenceEvent&, const PreferenceEvent&) = default;
};

/// Event log that has passed validation. Events are ordered by (timestamp, input
/// sequence number) and indexed per actor. Immutable after construction.
class ValidatedEventLog {
 public:
  ValidatedEventLog() = default;

  const std::vector<PreferenceEvent>& events() const noexcept { return events_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }

  /// Indices into events() of everything `actor` expressed, in log order.
  std::span<const std::uint32_t> actor_events(const UserId& actor) const;

  /// Every user appearing as actor or target, sorted.
  std::vector<UserId> users() const;

 private:
  friend ValidatedEventLog validate_events(std::vector<PreferenceEvent> events);

  std::vector<PreferenceEvent> events_;
  std::unordered_map<UserId, std::vector<std::uint32_t>> by_actor_;
};

/// Checks bipartiteness, rejects RECIPROCATE without an earlier LIKE the other way,
/// repeated (actor, target, kind) triples and second responses to one LIKE.
/// Throws BipartitenessViolation, DanglingReciprocation or DuplicateEvent.
ValidatedEventLog validate_events(std::vector<PreferenceEvent> events);

// Line-delimited text form: "ts<TAB>actor<TAB>target<TAB>kind", preceded by a
// "# reclab-events v1" header line.
void write_event_log(std::ostream& out, std::span<const PreferenceEvent> events);
std::vector<PreferenceEvent> read_event_log(std::istream& in);
std::string serialize_events(std::span<const PreferenceEvent> events);

void write_event_log_file(const std::string& path, std::span<const PreferenceEvent> events);
std::vector<PreferenceEvent> read_event_log_file(const std::string& path);

}  // namespace reclab
