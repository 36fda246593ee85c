#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>

#include "fixtures.hpp"
#include "reclab/error.hpp"
#include "reclab/tirr.hpp"

using namespace reclab;
using fixtures::ev;
using fixtures::uid;

namespace {

Vec128 random_vec(std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Vec128 v;
  for (auto& x : v) x = n(rng);
  return v;
}

DirectedInput random_directed(std::mt19937_64& rng, std::size_t length, std::size_t real) {
  std::vector<Vec128> steps;
  for (std::size_t i = 0; i < real; ++i) steps.push_back(random_vec(rng, 0.5));
  return {pad_and_mask(steps, length), random_vec(rng)};
}

// label follows the first coordinates of both candidates, so something is learnable
std::vector<PairInput> random_pairs(std::size_t n, std::size_t length, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(0, length);
  std::vector<PairInput> out;
  for (std::size_t k = 0; k < n; ++k) {
    PairInput p;
    p.x = {Side::X, static_cast<std::uint32_t>(k)};
    p.y = {Side::Y, static_cast<std::uint32_t>(k * 7 % 1000)};
    p.x_to_y = random_directed(rng, length, len(rng));
    p.y_to_x = random_directed(rng, length, len(rng));
    p.label = (p.x_to_y.candidate[0] + p.y_to_x.candidate[0] > 0) ? 1 : 0;
    out.push_back(std::move(p));
  }
  return out;
}

PairInput swapped(const PairInput& p) {
  PairInput s;
  s.x = p.y;
  s.y = p.x;
  s.x_to_y = p.y_to_x;
  s.y_to_x = p.x_to_y;
  s.label = p.label;
  return s;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

LstmWeights random_lstm(int hidden, int input, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  LstmWeights w{DMatrix(4 * hidden, input), DMatrix(4 * hidden, hidden), DVector(4 * hidden)};
  for (Eigen::Index i = 0; i < w.W.size(); ++i) w.W.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < w.U.size(); ++i) w.U.data()[i] = u(rng);
  for (Eigen::Index i = 0; i < w.b.size(); ++i) w.b.data()[i] = u(rng);
  return w;
}

LstmState random_state(int hidden, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1, 1);
  auto s = LstmState::zero(hidden);
  for (Eigen::Index i = 0; i < hidden; ++i) {
    s.s(i) = u(rng);
    s.h(i) = u(rng);
  }
  return s;
}

TirrCheckpoint initialized_model(std::uint64_t seed, TirrSpec spec = {}) {
  TirrNet net(spec);
  net.initialize(seed);
  return TirrCheckpoint(std::move(net), "sx", "sy");
}

}  // namespace

TEST_CASE("lstm cell follows the gate equations") {
  const int H = 5, D = 3;
  const auto w = random_lstm(H, D, 1);
  const auto prev = random_state(H, 2);
  DVector x(D);
  x << 0.3, -1.2, 0.8;
  const auto next = lstm_step(prev, x, w);
  const DVector z = w.W * x + w.U * prev.h + w.b;
  for (int k = 0; k < H; ++k) {
    const double i = sigmoid(z(k)), f = sigmoid(z(H + k)), g = std::tanh(z(2 * H + k)), o = sigmoid(z(3 * H + k));
    const double s = f * prev.s(k) + i * g;
    CHECK(next.s(k) == doctest::Approx(s).epsilon(1e-12));
    CHECK(next.h(k) == doctest::Approx(o * std::tanh(s)).epsilon(1e-12));
    CHECK(next.f(k) > 0.0);
    CHECK(next.f(k) < 1.0);
  }
}

TEST_CASE("forced gates") {
  const int H = 4, D = 2;
  const auto w = random_lstm(H, D, 3);
  const auto prev = random_state(H, 4);
  DVector x(D);
  x << 1.0, -0.5;
  SUBCASE("pass-through keeps the cell") {
    GateForce force{1.0, 0.0};
    const auto next = lstm_step(prev, x, w, false, &force);
    CHECK(next.s == prev.s);
  }
  SUBCASE("zero forget writes only the candidate") {
    GateForce force{0.0, std::nullopt};
    const auto next = lstm_step(prev, x, w, false, &force);
    for (int k = 0; k < H; ++k) CHECK(next.s(k) == doctest::Approx(next.i(k) * next.write(k)).epsilon(1e-15));
  }
  SUBCASE("masked step returns the previous state") {
    const auto next = lstm_step(prev, x, w, true);
    CHECK(next.s == prev.s);
    CHECK(next.h == prev.h);
  }
}

TEST_CASE("history step vectors") {
  EmbeddingTable table;
  std::mt19937_64 rng(5);
  for (const char* u : {"y1", "y2", "y3", "x1"}) table.set(uid(u), random_vec(rng));
  SUBCASE("empty history") {
    CHECK(history_step_vectors(PreferenceHistory{uid("x1"), {}}, table.at(uid("y1")), table).empty());
  }
  SUBCASE("identical liked image gives a zero step, dislikes flip the sign") {
    PreferenceHistory h{uid("x1"), {{uid("y1"), 1, 0}, {uid("y2"), 1, 1}, {uid("y2"), -1, 2}}};
    const auto steps = history_step_vectors(h, table.at(uid("y1")), table);
    REQUIRE(steps.size() == 3);
    CHECK(steps[0] == Vec128{});
    for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
      CHECK(steps[1][k] == std::abs(table.at(uid("y2"))[k] - table.at(uid("y1"))[k]));
      CHECK(steps[2][k] == -steps[1][k]);
    }
  }
  SUBCASE("missing image") {
    PreferenceHistory h{uid("x1"), {{uid("y9"), 1, 0}}};
    CHECK_THROWS_AS(history_step_vectors(h, table.at(uid("y1")), table), MissingImage);
  }
}

TEST_CASE("pair inputs exclude the counterpart and respect the reference time") {
  const auto log = validate_events({ev(0, "x1", "y2", EventKind::Like), ev(1, "x1", "y1", EventKind::Like),
                                    ev(2, "y1", "x2", EventKind::Like), ev(3, "y1", "x1", EventKind::Reciprocate),
                                    ev(4, "y1", "x3", EventKind::Like)});
  EmbeddingTable table;
  std::mt19937_64 rng(6);
  for (const char* u : {"x1", "x2", "x3", "y1", "y2"}) table.set(uid(u), random_vec(rng));
  const LabeledPair pair{uid("x1"), uid("y1"), PairLabel::Match, 3};
  const auto in = make_pair_input(pair, log, table, {});
  CHECK(in.label == 1);
  CHECK(std::count(in.x_to_y.history.mask.begin(), in.x_to_y.history.mask.end(), true) == 1);  // y2 only
  CHECK(std::count(in.y_to_x.history.mask.begin(), in.y_to_x.history.mask.end(), true) == 1);  // x2 only
  CHECK(in.x_to_y.candidate == table.at(uid("y1")));
  CHECK(in.y_to_x.candidate == table.at(uid("x1")));
}

TEST_CASE("uninitialized model refuses to score") {
  const TirrCheckpoint blank;
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(blank.directed_score(random_directed(rng, 15, 3)), UninitializedWeights);
}

TEST_CASE("match probability is symmetric to the last bit") {
  const auto model = initialized_model(7);
  const auto pairs = random_pairs(1000, 15, 8);
  std::vector<PairInput> flipped;
  for (const auto& p : pairs) flipped.push_back(swapped(p));
  const auto a = model.match_probabilities(pairs);
  const auto b = model.match_probabilities(flipped);
  CHECK(a == b);
  for (std::size_t k = 0; k < 20; ++k) CHECK(model.match_probability(pairs[k]) == model.match_probability(flipped[k]));
  for (double v : a) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("prepending masked steps never changes the directed score") {
  const auto model = initialized_model(9);
  std::mt19937_64 rng(10);
  double worst = 0;
  for (std::size_t real = 0; real <= 5; ++real) {
    std::vector<Vec128> steps;
    for (std::size_t i = 0; i < real; ++i) steps.push_back(random_vec(rng));
    const auto candidate = random_vec(rng);
    const double base = model.directed_score({pad_and_mask(steps, 5), candidate});
    for (std::size_t len : {6, 10, 15, 30}) {
      worst = std::max(worst, std::abs(model.directed_score({pad_and_mask(steps, len), candidate}) - base));
    }
  }
  CHECK(worst == 0.0);
}

TEST_CASE("empty histories depend only on the candidate") {
  const auto model = initialized_model(11);
  std::mt19937_64 rng(12);
  const auto c = random_vec(rng);
  const double a = model.directed_score({pad_and_mask({}), c});
  CHECK(a == model.directed_score({pad_and_mask({}), c}));
  CHECK(a != model.directed_score({pad_and_mask({}), random_vec(rng)}));
}

TEST_CASE("zero head gives one half") {
  auto model = initialized_model(13);
  for (auto* p : model.net().params())
    if (p->name.rfind("output", 0) == 0) p->value.setZero();
  const auto pairs = random_pairs(5, 15, 14);
  for (double v : model.match_probabilities(pairs)) CHECK(v == 0.5);
}

TEST_CASE("miniature tirr gradients match central differences") {
  const auto spec = TirrSpec::miniature();
  TirrNet net(spec);
  net.initialize(15);
  const auto pairs = random_pairs(6, spec.sequence_length, 16);
  std::mt19937_64 rng(17);
  std::bernoulli_distribution keep(1.0 - spec.dropout);
  DMatrix mask(spec.dense_units, 2 * pairs.size());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? 1.0 / (1.0 - spec.dropout) : 0.0;

  net.zero_grad();
  tirr_batch_loss(net, pairs, nn::Mode::Train, true, nullptr, &mask);
  const auto loss = [&] { return tirr_batch_loss(net, pairs, nn::Mode::Train, false, nullptr, &mask); };
  const auto r = fixtures::check_param_grads(net.params(), loss, 150, 18);
  MESSAGE("max relative error " << r.max_rel_error << " over " << r.coordinates);
  CHECK(r.coordinates >= 100);
  CHECK(r.max_rel_error <= 1e-4);
}

TEST_CASE("dropout acts only in training") {
  const auto model = initialized_model(19);
  const auto pairs = random_pairs(8, 15, 20);
  auto& net = const_cast<TirrNet&>(model.net());
  std::mt19937_64 a(1), b(2);
  const double infer1 = tirr_batch_loss(net, pairs, nn::Mode::Infer, false, &a);
  const double infer2 = tirr_batch_loss(net, pairs, nn::Mode::Infer, false, &b);
  CHECK(infer1 == infer2);
  std::mt19937_64 c(1), d(2);
  CHECK(tirr_batch_loss(net, pairs, nn::Mode::Train, false, &c) != tirr_batch_loss(net, pairs, nn::Mode::Train, false, &d));
}

TEST_CASE("training") {
  const SiamesePair siamese{SiameseCheckpoint(nn::EncoderSpec::face_encoder(), Side::X, 1),
                            SiameseCheckpoint(nn::EncoderSpec::face_encoder(), Side::Y, 2)};
  const auto pairs = random_pairs(200, 15, 21);
  TirrTrainConfig cfg;
  cfg.epochs = 5;

  SUBCASE("loss decreases and the encoders stay frozen") {
    const auto before_x = siamese.x_judge.to_checkpoint().serialize();
    const auto before_y = siamese.y_judge.to_checkpoint().serialize();
    const auto model = train_tirr(pairs, siamese, cfg);
    REQUIRE(model.loss_log.size() == 5);
    MESSAGE("loss first " << model.loss_log.front() << " last " << model.loss_log.back());
    CHECK(model.loss_log.back() < model.loss_log.front());
    CHECK(siamese.x_judge.to_checkpoint().serialize() == before_x);
    CHECK(siamese.y_judge.to_checkpoint().serialize() == before_y);
  }
  SUBCASE("swapping every pair leaves the trajectory unchanged") {
    std::vector<PairInput> flipped;
    for (const auto& p : pairs) flipped.push_back(swapped(p));
    const auto a = train_tirr(pairs, siamese, cfg);
    const auto b = train_tirr(flipped, siamese, cfg);
    CHECK(a.loss_log == b.loss_log);
    CHECK(a.to_checkpoint().serialize() == b.to_checkpoint().serialize());
  }
  SUBCASE("zero epochs is the initialization") {
    cfg.epochs = 0;
    const auto model = train_tirr(pairs, siamese, cfg);
    TirrNet init;
    init.initialize(cfg.seed);
    const auto p = model.net().params();
    const auto q = std::as_const(init).params();
    REQUIRE(p.size() == q.size());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i]->value == q[i]->value);
  }
  SUBCASE("the best held-out epoch is kept") {
    const auto model = train_tirr(pairs, siamese, cfg);
    REQUIRE(model.validation_auc.size() == 5);
    const auto best = std::max_element(model.validation_auc.begin(), model.validation_auc.end());
    CHECK(model.selected_epoch == static_cast<std::size_t>(best - model.validation_auc.begin()) + 1);
    // a run stopped at the selected epoch ends on the same weights
    cfg.epochs = model.selected_epoch;
    const auto shorter = train_tirr(pairs, siamese, cfg);
    CHECK(shorter.selected_epoch == model.selected_epoch);
    const auto p = model.net().params();
    const auto q = shorter.net().params();
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i]->value == q[i]->value);

    cfg.epochs = 3;
    cfg.validation_fraction = 0.0;
    const auto last = train_tirr(pairs, siamese, cfg);
    CHECK(last.validation_auc.empty());
    CHECK(last.selected_epoch == 0);
    CHECK(last.loss_log.size() == 3);
  }
  SUBCASE("checkpoint round-trip and digest refusal") {
    cfg.epochs = 2;
    const auto model = train_tirr(pairs, siamese, cfg);
    const auto ck = Checkpoint::deserialize(model.to_checkpoint().serialize());
    const auto back = TirrCheckpoint::from_checkpoint(ck, siamese);
    CHECK(back.match_probabilities(pairs) == model.match_probabilities(pairs));
    CHECK(back.loss_log == model.loss_log);
    CHECK(back.validation_auc == model.validation_auc);
    CHECK(back.selected_epoch == model.selected_epoch);
    CHECK(back.net().input_scaling().step_scale == model.net().input_scaling().step_scale);
    const SiamesePair other{SiameseCheckpoint(nn::EncoderSpec::face_encoder(), Side::X, 3), siamese.y_judge};
    CHECK_THROWS_AS(TirrCheckpoint::from_checkpoint(ck, other), ProvenanceError);
  }
  CHECK_THROWS_AS(train_tirr({}, siamese, cfg), std::invalid_argument);
}

TEST_CASE("recommendation ranking") {
  std::vector<PreferenceEvent> events;
  for (std::uint32_t j = 0; j < 6; ++j) {
    events.push_back({Tick(j), {Side::X, 0}, {Side::Y, j}, EventKind::Like});
    events.push_back({Tick(10 + j), {Side::Y, j}, {Side::X, j % 3 + 1}, EventKind::Like});
  }
  const auto log = validate_events(events);
  EmbeddingTable table;
  std::mt19937_64 rng(22);
  for (std::uint32_t i = 0; i < 8; ++i) {
    table.set({Side::X, i}, random_vec(rng));
    table.set({Side::Y, i}, random_vec(rng));
  }
  const auto model = initialized_model(23);
  const TirrRecommender rec(model, log, table);
  std::vector<UserId> pool;
  for (std::uint32_t j = 0; j < 8; ++j) pool.push_back({Side::Y, j});
  const UserId x{Side::X, 0};

  const auto all = rec.recommend_top_k(x, pool, 20, 100);
  REQUIRE(all.size() == pool.size());
  for (std::size_t i = 1; i < all.size(); ++i) {
    CHECK(all[i - 1].second >= all[i].second);
    if (all[i - 1].second == all[i].second) CHECK(all[i - 1].first < all[i].first);
  }
  double best = -1;
  UserId arg;
  for (const auto& y : pool) {
    const double s = rec.match_probability(x, y, 100);
    if (s > best) {
      best = s;
      arg = y;
    }
  }
  const auto top = rec.recommend_top_k(x, pool, 1, 100);
  REQUIRE(top.size() == 1);
  CHECK(top[0].first == arg);
  CHECK(top[0].second == best);

  const std::vector<UserId> single{{Side::Y, 5}};
  CHECK(rec.recommend_top_k(x, single, 1, 100)[0].first == single[0]);
  CHECK_THROWS_AS(rec.recommend_top_k(x, std::span<const UserId>{}, 1, 100), EmptyPool);
  CHECK_THROWS_AS(rec.recommend_top_k(x, pool, 0, 100), std::invalid_argument);
}

TEST_CASE("spec round-trips through json") {
  CHECK(tirr_spec_from_json(to_json(TirrSpec{})) == TirrSpec{});
  CHECK(tirr_spec_from_json(to_json(TirrSpec::miniature())) == TirrSpec::miniature());
  CHECK(TirrNet(TirrSpec{}).param_count() == 4 * 128 * (128 + 128 + 1) + 128 * 129 + 128 * 257 + 129);
}
