#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "reclab/events.hpp"

namespace reclab {

inline constexpr std::size_t kHistoryCap = 15;
inline constexpr Tick kDefaultYearTicks = 100'000;

struct HistoryItem {
  UserId target;
  int polarity = 1;
  Tick timestamp = 0;

  friend bool operator==(const HistoryItem&, const HistoryItem&) = default;
};

/// A user's past expressions, oldest first.
struct PreferenceHistory {
  UserId owner;
  std::vector<HistoryItem> items;

  std::size_t size() const noexcept { return items.size(); }
  bool empty() const noexcept { return items.empty(); }
};

struct HistoryOptions {
  std::size_t cap = kHistoryCap;
  Tick max_age = kDefaultYearTicks;
  /// Expressions toward this user are skipped (the counterpart of the pair being scored).
  std::optional<UserId> exclude;
};

/// The user's most recent expressions with timestamp in
/// [reference_time - max_age, reference_time), at most `cap`, oldest first.
PreferenceHistory build_history(const UserId& user, const ValidatedEventLog& log,
                                Tick reference_time, const HistoryOptions& options = {});

}  // namespace reclab
