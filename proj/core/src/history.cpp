#include "reclab/history.hpp"

#include <algorithm>

namespace reclab {

PreferenceHistory build_history(const UserId& user, const ValidatedEventLog& log,
                                Tick reference_time, const HistoryOptions& options) {
  PreferenceHistory history{user, {}};
  const auto& events = log.events();
  const auto indices = log.actor_events(user);
  // Walk backwards from the newest expression before reference_time.
  auto end = std::lower_bound(indices.begin(), indices.end(), reference_time,
                              [&](std::uint32_t i, Tick t) { return events[i].timestamp < t; });
  for (auto it = end; it != indices.begin() && history.items.size() < options.cap;) {
    const auto& e = events[*--it];
    if (reference_time - e.timestamp > options.max_age) break;
    if (options.exclude && e.target == *options.exclude) continue;
    history.items.push_back({e.target, polarity(e.kind), e.timestamp});
  }
  std::reverse(history.items.begin(), history.items.end());
  return history;
}

}  // namespace reclab
