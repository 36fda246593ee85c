#pragma once

#include <cstdint>
#include <vector>

#include "reclab/events.hpp"

namespace reclab {

enum class PairLabel : std::uint8_t { LikeDislike = 0, Match = 1 };

/// A LIKE from x answered by y. `reference_time` is the timestamp of y's answer.
struct LabeledPair {
  UserId x;
  UserId y;
  PairLabel label = PairLabel::LikeDislike;
  Tick reference_time = 0;

  friend auto operator<=>(const LabeledPair&, const LabeledPair&) = default;
};

/// LIKE then RECIPROCATE -> Match, LIKE then DISLIKE -> LikeDislike. Unanswered
/// LIKEs produce nothing. Output is in the order of the answering events.
std::vector<LabeledPair> extract_labeled_pairs(const ValidatedEventLog& log);

}  // namespace reclab
