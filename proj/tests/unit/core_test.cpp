#include <doctest.h>

#include <map>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "reclab/checkpoint.hpp"
#include "reclab/digest.hpp"
#include "reclab/error.hpp"
#include "reclab/history.hpp"
#include "reclab/pairs.hpp"
#include "reclab/split.hpp"
#include "reclab/synth.hpp"

using namespace reclab;
using fixtures::ev;
using fixtures::uid;

namespace {

ValidatedEventLog world_log(std::uint64_t seed, std::size_t n, std::uint32_t users = 40) {
  const auto world = generate_world(fixtures::small_world(seed, users));
  return validate_events(sample_events(world, n, seed + 100));
}

// Independent label oracle: for each LIKE, scan forward for the first answer.
std::set<LabeledPair> brute_force_pairs(const std::vector<PreferenceEvent>& events) {
  std::set<LabeledPair> out;
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (events[i].kind != EventKind::Like) continue;
    for (std::size_t j = i + 1; j < events.size(); ++j) {
      const auto& r = events[j];
      if (r.actor == events[i].target && r.target == events[i].actor && r.kind != EventKind::Like) {
        out.insert({events[i].actor, events[i].target,
                    r.kind == EventKind::Reciprocate ? PairLabel::Match : PairLabel::LikeDislike, r.timestamp});
        break;
      }
    }
  }
  return out;
}

}  // namespace

TEST_CASE("user ids round-trip through text") {
  CHECK(uid("x12").side == Side::X);
  CHECK(uid("y3").index == 3);
  CHECK(uid("y3").str() == "y3");
  CHECK_THROWS_AS(UserId::parse("z1"), FormatError);
  CHECK_THROWS_AS(UserId::parse("x"), FormatError);
}

TEST_CASE("minimal legal log has one match") {
  const auto log = validate_events({ev(0, "x1", "y1", EventKind::Like), ev(1, "y1", "x1", EventKind::Reciprocate)});
  const auto pairs = extract_labeled_pairs(log);
  REQUIRE(pairs.size() == 1);
  CHECK(pairs[0].label == PairLabel::Match);
  CHECK(pairs[0].x == uid("x1"));
  CHECK(pairs[0].reference_time == 1);
}

TEST_CASE("validation rejects malformed logs") {
  CHECK_THROWS_AS(validate_events({ev(0, "y1", "x1", EventKind::Reciprocate)}), DanglingReciprocation);
  CHECK_THROWS_AS(validate_events({ev(0, "x1", "x2", EventKind::Like)}), BipartitenessViolation);
  CHECK_THROWS_AS(validate_events({ev(0, "x1", "y1", EventKind::Like), ev(1, "x1", "y1", EventKind::Like)}),
                  DuplicateEvent);
  CHECK_THROWS_AS(validate_events({ev(0, "x1", "y1", EventKind::Like), ev(1, "y1", "x1", EventKind::Dislike),
                                   ev(2, "y1", "x1", EventKind::Reciprocate)}),
                  DuplicateEvent);
  // reciprocation must follow the like in time
  CHECK_THROWS_AS(validate_events({ev(5, "x1", "y1", EventKind::Like), ev(1, "y1", "x1", EventKind::Reciprocate)}),
                  DanglingReciprocation);
}

TEST_CASE("events are ordered by timestamp then input order") {
  const auto log = validate_events({ev(3, "x1", "y2", EventKind::Like), ev(1, "x1", "y1", EventKind::Like),
                                    ev(3, "x2", "y1", EventKind::Like)});
  REQUIRE(log.size() == 3);
  CHECK(log.events()[0].target == uid("y1"));
  CHECK(log.events()[1].target == uid("y2"));
  CHECK(log.events()[2].actor == uid("x2"));
  CHECK(log.actor_events(uid("x1")).size() == 2);
  CHECK(log.actor_events(uid("y9")).empty());
}

TEST_CASE("pair extraction labels") {
  SUBCASE("like then dislike") {
    const auto log = validate_events({ev(0, "x1", "y1", EventKind::Like), ev(1, "y1", "x1", EventKind::Dislike)});
    const auto pairs = extract_labeled_pairs(log);
    REQUIRE(pairs.size() == 1);
    CHECK(pairs[0].label == PairLabel::LikeDislike);
  }
  SUBCASE("unanswered like") {
    CHECK(extract_labeled_pairs(validate_events({ev(0, "x1", "y1", EventKind::Like)})).empty());
  }
}

TEST_CASE("pair extraction agrees with a brute-force scan") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto log = world_log(seed, 200 + 100 * seed, 12);
    const auto pairs = extract_labeled_pairs(log);
    const std::set<LabeledPair> got(pairs.begin(), pairs.end());
    CHECK(got.size() == pairs.size());
    CHECK(got == brute_force_pairs(log.events()));
  }
}

TEST_CASE("three-way split partitions by pair") {
  const auto log = world_log(3, 1000);
  REQUIRE(log.size() == 1000);
  const SplitFractions f{0.5, 0.3, 0.2};
  const auto a = split_three_way(log, f, 7);
  const auto b = split_three_way(log, f, 7);
  std::multiset<PreferenceEvent> all;
  std::map<std::pair<UserId, UserId>, int> owner;
  int which = 0;
  for (const auto* part : {&a.siamese_set, &a.match_set, &a.eval_set}) {
    for (const auto& e : part->events()) {
      all.insert(e);
      const auto key = std::minmax(e.actor, e.target);
      auto [it, fresh] = owner.emplace(key, which);
      CHECK(it->second == which);
    }
    ++which;
  }
  CHECK(all.size() == log.size());
  CHECK(std::set<PreferenceEvent>(all.begin(), all.end()).size() == log.size());
  CHECK(std::multiset<PreferenceEvent>(log.events().begin(), log.events().end()) == all);
  CHECK(a.siamese_set.events() == b.siamese_set.events());
  CHECK(a.eval_set.events() == b.eval_set.events());
  CHECK(a.siamese_set.size() > a.match_set.size());
  CHECK(a.match_set.size() > a.eval_set.size());
}

TEST_CASE("partition holds for many seeds") {
  const auto log = world_log(4, 800);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = split_three_way(log, {}, seed);
    CHECK(s.siamese_set.size() + s.match_set.size() + s.eval_set.size() == log.size());
  }
}

TEST_CASE("degenerate split fractions") {
  const auto log = world_log(5, 500);
  CHECK_THROWS_AS(split_three_way(log, {1.0, 0.0, 0.0}, 1), EmptySplit);
  CHECK_THROWS_AS(split_three_way(log, {0.5, 0.6, -0.1}, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_three_way(log, {0.5, 0.2, 0.2}, 1), std::invalid_argument);
}

TEST_CASE("history keeps the 15 most recent expressions") {
  std::vector<PreferenceEvent> events;
  for (int i = 0; i < 20; ++i) {
    events.push_back({i, uid("x0"), UserId{Side::Y, static_cast<std::uint32_t>(i)}, EventKind::Like});
  }
  const auto log = validate_events(events);
  const auto h = build_history(uid("x0"), log, 100);
  REQUIRE(h.size() == 15);
  CHECK(h.items.front().target == UserId{Side::Y, 5});
  CHECK(h.items.back().target == UserId{Side::Y, 19});
  CHECK(build_history(uid("x5"), log, 100).empty());
}

TEST_CASE("history drops expressions older than max_age") {
  const auto log = validate_events({ev(0, "x1", "y1", EventKind::Like), ev(500, "x1", "y2", EventKind::Like),
                                    ev(900, "x1", "y3", EventKind::Like)});
  HistoryOptions opts;
  opts.max_age = 600;
  const auto h = build_history(uid("x1"), log, 1000, opts);
  REQUIRE(h.size() == 2);
  CHECK(h.items[0].target == uid("y2"));
  opts.exclude = uid("y3");
  CHECK(build_history(uid("x1"), log, 1000, opts).size() == 1);
  // strictly before the reference time
  CHECK(build_history(uid("x1"), log, 900, {}).size() == 2);
}

TEST_CASE("history timestamps increase and precede the reference") {
  const auto log = world_log(6, 3000, 20);
  for (const auto& u : log.users()) {
    for (Tick ref : {Tick{100}, Tick{1500}, Tick{4000}}) {
      const auto h = build_history(u, log, ref);
      CHECK(h.size() <= kHistoryCap);
      for (std::size_t i = 0; i < h.size(); ++i) {
        CHECK(h.items[i].timestamp < ref);
        if (i) CHECK(h.items[i - 1].timestamp < h.items[i].timestamp);
      }
    }
  }
}

TEST_CASE("dislike history items carry negative polarity") {
  const auto log = validate_events({ev(0, "x1", "y1", EventKind::Like), ev(1, "y1", "x1", EventKind::Dislike)});
  const auto h = build_history(uid("y1"), log, 5);
  REQUIRE(h.size() == 1);
  CHECK(h.items[0].polarity == -1);
}

TEST_CASE("event log text form round-trips") {
  const auto log = world_log(8, 300);
  std::stringstream s;
  write_event_log(s, log.events());
  const auto back = read_event_log(s);
  CHECK(back == log.events());
  std::istringstream bad("1\tx1\ty1\tLIKE\n");
  CHECK_THROWS_AS(read_event_log(bad), FormatError);
  std::istringstream garbled("# reclab-events v1\n1\tx1\ty1\tWINK\n");
  CHECK_THROWS_AS(read_event_log(garbled), FormatError);
}

TEST_CASE("event digests ignore order") {
  std::vector<PreferenceEvent> a{ev(0, "x1", "y1", EventKind::Like), ev(1, "x2", "y1", EventKind::Like)};
  std::vector<PreferenceEvent> b{a[1], a[0]};
  CHECK(event_set_digest(a) == event_set_digest(b));
  b.pop_back();
  CHECK(event_set_digest(a) != event_set_digest(b));
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoints are byte-stable and round-trip") {
  Checkpoint ck("demo");
  ck.metadata()["b"] = 2;
  ck.metadata()["a"] = {{"z", 1.5}};
  const std::vector<float> w{1.0f, -2.5f, 3.25f, 0.0f};
  const std::vector<double> v{0.1, 1e-300};
  ck.add("w", {2, 2}, w);
  ck.add("v", {2}, v);
  const auto bytes = ck.serialize();
  const auto back = Checkpoint::deserialize(bytes);
  CHECK(back.serialize() == bytes);
  CHECK(back.kind() == "demo");
  CHECK(back.tensor("w").values[1] == -2.5);
  CHECK(back.tensor("v").values[1] == 1e-300);
  CHECK(back.tensor("w").shape == std::vector<std::int64_t>{2, 2});
  CHECK(back.digest() == ck.digest());
  CHECK_THROWS_AS(back.expect_kind("other"), FormatError);
  CHECK_THROWS(back.tensor("missing"));
  CHECK_THROWS_AS(Checkpoint::deserialize(bytes.substr(0, bytes.size() / 2)), FormatError);
  CHECK_THROWS_AS(Checkpoint::deserialize("NOTACKPT"), FormatError);
}
