#pragma once

#include <cstdint>

#include "reclab/events.hpp"

namespace reclab {

struct SplitFractions {
  double siamese = 0.4;
  double match = 0.4;
  double eval = 0.2;
};

/// The three event-disjoint datasets: Siamese pretraining, TIRR training on
/// matches, and evaluation.
struct DatasetBundle {
  ValidatedEventLog siamese_set;
  ValidatedEventLog match_set;
  ValidatedEventLog eval_set;
};

/// Partitions the log by unordered user pair, so every LIKE and its answer land in
/// the same split. Deterministic in `seed`. Throws EmptySplit if a split ends up
/// with no MATCH pair, std::invalid_argument on negative or non-normalized fractions.
DatasetBundle split_three_way(const ValidatedEventLog& log, const SplitFractions& fractions,
                              std::uint64_t seed);

}  // namespace reclab
