#include "reclab/events.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "reclab/error.hpp"

namespace reclab {

namespace {
constexpr std::string_view kLogHeader = "# reclab-events v1";
}

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::Like: return "LIKE";
    case EventKind::Dislike: return "DISLIKE";
    case EventKind::Reciprocate: return "RECIPROCATE";
  }
  return "?";
}

EventKind parse_event_kind(std::string_view text) {
  if (text == "LIKE") return EventKind::Like;
  if (text == "DISLIKE") return EventKind::Dislike;
  if (text == "RECIPROCATE") return EventKind::Reciprocate;
  throw FormatError("unknown event kind '" + std::string(text) + "'");
}

std::span<const std::uint32_t> ValidatedEventLog::actor_events(const UserId& actor) const {
  auto it = by_actor_.find(actor);
  if (it == by_actor_.end()) return {};
  return it->second;
}

std::vector<UserId> ValidatedEventLog::users() const {
  std::set<UserId> seen;
  for (const auto& e : events_) {
    seen.insert(e.actor);
    seen.insert(e.target);
  }
  return {seen.begin(), seen.end()};
}

ValidatedEventLog validate_events(std::vector<PreferenceEvent> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });

  using Key = std::tuple<UserId, UserId, EventKind>;
  std::set<Key> seen;
  // (liker, liked) for LIKEs that have been seen; mapped value is true once answered.
  std::set<std::pair<UserId, UserId>> likes;
  std::set<std::pair<UserId, UserId>> answered;

  ValidatedEventLog log;
  for (std::size_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    const auto where = [&] {
      return " at ts=" + std::to_string(e.timestamp) + " (" + e.actor.str() + "->" +
             e.target.str() + " " + std::string(to_string(e.kind)) + ")";
    };
    if (e.actor.side == e.target.side) throw BipartitenessViolation("same-side edge" + where());
    if (!seen.insert({e.actor, e.target, e.kind}).second) {
      throw DuplicateEvent("repeated expression" + where());
    }
    if (e.kind == EventKind::Like) {
      likes.insert({e.actor, e.target});
    } else {
      const std::pair<UserId, UserId> like{e.target, e.actor};
      const bool has_like = likes.contains(like);
      if (e.kind == EventKind::Reciprocate && !has_like) {
        throw DanglingReciprocation("no earlier LIKE to reciprocate" + where());
      }
      if (has_like && !answered.insert(like).second) {
        throw DuplicateEvent("second response to one LIKE" + where());
      }
    }
    log.by_actor_[e.actor].push_back(static_cast<std::uint32_t>(i));
  }
  log.events_ = std::move(events);
  return log;
}

void write_event_log(std::ostream& out, std::span<const PreferenceEvent> events) {
  out << kLogHeader << '\n';
  for (const auto& e : events) {
    out << e.timestamp << '\t' << e.actor.str() << '\t' << e.target.str() << '\t'
        << to_string(e.kind) << '\n';
  }
}

std::vector<PreferenceEvent> read_event_log(std::istream& in) {
  std::vector<PreferenceEvent> events;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (line_no == 1) header = line == kLogHeader;
      continue;
    }
    std::istringstream fields(line);
    std::string ts, actor, target, kind;
    if (!(std::getline(fields, ts, '\t') && std::getline(fields, actor, '\t') &&
          std::getline(fields, target, '\t') && std::getline(fields, kind, '\t'))) {
      throw FormatError("event log line " + std::to_string(line_no) + ": expected 4 fields");
    }
    PreferenceEvent e;
    try {
      e.timestamp = std::stoll(ts);
    } catch (const std::exception&) {
      throw FormatError("event log line " + std::to_string(line_no) + ": bad timestamp");
    }
    e.actor = UserId::parse(actor);
    e.target = UserId::parse(target);
    e.kind = parse_event_kind(kind);
    events.push_back(e);
  }
  if (!header && line_no > 0) throw FormatError("event log is missing the reclab-events header");
  return events;
}

std::string serialize_events(std::span<const PreferenceEvent> events) {
  std::ostringstream out;
  write_event_log(out, events);
  return out.str();
}

void write_event_log_file(const std::string& path, std::span<const PreferenceEvent> events) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  write_event_log(out, events);
  if (!out) throw IoFailure("write failed: " + path);
}

std::vector<PreferenceEvent> read_event_log_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  return read_event_log(in);
}

}  // namespace reclab
