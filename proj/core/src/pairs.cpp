#include "reclab/pairs.hpp"

#include <map>

namespace reclab {

std::vector<LabeledPair> extract_labeled_pairs(const ValidatedEventLog& log) {
  std::map<std::pair<UserId, UserId>, bool> pending;  // (liker, liked) -> answered
  std::vector<LabeledPair> pairs;
  for (const auto& e : log.events()) {
    if (e.kind == EventKind::Like) {
      pending.emplace(std::pair{e.actor, e.target}, false);
      continue;
    }
    auto it = pending.find({e.target, e.actor});
    if (it == pending.end() || it->second) continue;
    it->second = true;
    pairs.push_back({e.target, e.actor,
                     e.kind == EventKind::Reciprocate ? PairLabel::Match : PairLabel::LikeDislike,
                     e.timestamp});
  }
  return pairs;
}

}  // namespace reclab
