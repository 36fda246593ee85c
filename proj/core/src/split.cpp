#include "reclab/split.hpp"

#include <array>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "reclab/error.hpp"
#include "reclab/pairs.hpp"

namespace reclab {

DatasetBundle split_three_way(const ValidatedEventLog& log, const SplitFractions& fractions,
                              std::uint64_t seed) {
  const std::array<double, 3> f{fractions.siamese, fractions.match, fractions.eval};
  for (double v : f) {
    if (!(v >= 0.0)) throw std::invalid_argument("split fractions must be non-negative");
  }
  if (std::abs(f[0] + f[1] + f[2] - 1.0) > 1e-9) {
    throw std::invalid_argument("split fractions must sum to 1");
  }

  using PairKey = std::pair<UserId, UserId>;
  std::map<PairKey, std::vector<std::uint32_t>> groups;
  const auto& events = log.events();
  for (std::uint32_t i = 0; i < events.size(); ++i) {
    const auto& e = events[i];
    groups[std::minmax(e.actor, e.target)].push_back(i);
  }

  std::vector<const std::vector<std::uint32_t>*> order;
  order.reserve(groups.size());
  for (const auto& [key, members] : groups) order.push_back(&members);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::array<std::vector<std::uint32_t>, 3> members;
  const double total = static_cast<double>(events.size());
  std::size_t assigned = 0;
  for (const auto* group : order) {
    const double position = static_cast<double>(assigned) / total;
    const int target = position < f[0] ? 0 : position < f[0] + f[1] ? 1 : 2;
    members[target].insert(members[target].end(), group->begin(), group->end());
    assigned += group->size();
  }

  std::array<ValidatedEventLog, 3> logs;
  static constexpr std::array<const char*, 3> kNames{"siamese", "match", "eval"};
  for (int s = 0; s < 3; ++s) {
    std::sort(members[s].begin(), members[s].end());
    std::vector<PreferenceEvent> subset;
    subset.reserve(members[s].size());
    for (auto i : members[s]) subset.push_back(events[i]);
    logs[s] = validate_events(std::move(subset));
    const auto pairs = extract_labeled_pairs(logs[s]);
    const bool has_match = std::any_of(pairs.begin(), pairs.end(),
                                       [](const auto& p) { return p.label == PairLabel::Match; });
    if (!has_match) {
      throw EmptySplit(std::string("split '") + kNames[s] + "' received no match pairs");
    }
  }
  return {std::move(logs[0]), std::move(logs[1]), std::move(logs[2])};
}

}  // namespace reclab
