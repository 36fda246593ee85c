#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "reclab/error.hpp"
#include "reclab/siamese.hpp"
#include "reclab/synth.hpp"

using namespace reclab;
using fixtures::ev;
using fixtures::uid;

namespace {

Embedding128 emb(std::initializer_list<double> head) {
  Embedding128 e;
  std::size_t i = 0;
  for (double v : head) e.h[i++] = v;
  return e;
}

nn::Matrix<double> random_images(int values, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  nn::Matrix<double> m(values, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

SiameseNet<double> mini_net(std::uint64_t seed) {
  SiameseNet<double> net(nn::EncoderSpec::miniature());
  net.encoder.initialize(seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& w : net.head.weights) w = u(rng);
  net.head.bias = 0.1;
  return net;
}

// judge x1 likes y1, y2 and dislikes y3 (after y3 liked them)
ValidatedEventLog tiny_log() {
  return validate_events({ev(0, "x1", "y1", EventKind::Like), ev(1, "x1", "y2", EventKind::Like),
                          ev(2, "y3", "x1", EventKind::Like), ev(3, "x1", "y3", EventKind::Dislike)});
}

}  // namespace

TEST_CASE("distance examples") {
  const auto a = emb({1, 0});
  const auto b = emb({0, 1});
  const auto d = distance(a, b);
  CHECK(d[0] == 1.0);
  CHECK(d[1] == 1.0);
  for (std::size_t i = 2; i < kEmbeddingDim; ++i) CHECK(d[i] == 0.0);
  CHECK(distance(a, a) == Vec128{});
  CHECK(distance(a, b) == distance(b, a));
}

TEST_CASE("head probability examples") {
  PreferenceHead zero;
  Vec128 v;
  v.fill(3.0);
  CHECK(head_probability(v, zero) == 0.5);
  PreferenceHead h;
  h.bias = 0.7;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) h.weights[i] = std::sin(double(i));
  CHECK(head_probability(Vec128{}, h) == doctest::Approx(1.0 / (1.0 + std::exp(-0.7))));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  for (int t = 0; t < 100; ++t) {
    Embedding128 a, b;
    for (auto& x : a.h) x = n(rng);
    for (auto& x : b.h) x = n(rng);
    const double p = head_probability(distance(a, b), h);
    CHECK(p == head_probability(distance(b, a), h));
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("bce examples") {
  CHECK(bce_loss(1 - kBceEpsilon, 1) == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(bce_loss(0.5, 0) == doctest::Approx(std::log(2.0)));
  CHECK(bce_loss(0.5, 1) == doctest::Approx(0.6931).epsilon(1e-4));
  CHECK(bce_loss(0.9, 0) == doctest::Approx(2.3026).epsilon(1e-4));
  CHECK(std::isfinite(bce_loss(0.0, 1)));
  CHECK(bce_loss(0.0, 1) == doctest::Approx(-std::log(kBceEpsilon)));
  for (double p = 0.0; p <= 1.0; p += 0.01) {
    CHECK(bce_loss(p, 0) >= 0.0);
    CHECK(bce_loss(p, 1) >= 0.0);
  }
  for (double p : {0.1, 0.37, 0.8}) {
    for (int y : {0, 1}) {
      const double fd = (bce_loss(p + 1e-7, y) - bce_loss(p - 1e-7, y)) / 2e-7;
      CHECK(fixtures::rel_error(bce_loss_grad(p, y), fd) < 1e-6);
    }
  }
}

TEST_CASE("contrastive examples") {
  CHECK(contrastive_loss(0.0, 1, 1.0) == 0.0);
  CHECK(contrastive_loss(1.5, 0, 1.0) == 0.0);
  CHECK(contrastive_loss(1.0, 0, 1.0) == 0.0);
  CHECK(contrastive_loss(0.0, 0, 1.0) == 0.5);
  CHECK(contrastive_loss(0.6, 1, 1.0) == doctest::Approx(0.18));
  CHECK(contrastive_loss(0.6, 0, 1.0) == doctest::Approx(0.08));
  // the printed convention swaps the two terms
  CHECK(contrastive_loss(0.0, 0, 1.0, ContrastiveConvention::LikeIsLabelOne) == 0.0);
  CHECK(contrastive_loss(0.0, 1, 1.0, ContrastiveConvention::LikeIsLabelOne) == 0.5);
  for (double d = 0.05; d < 2.0; d += 0.1)
    for (int y : {0, 1})
      for (auto c : {ContrastiveConvention::LikeIsSimilar, ContrastiveConvention::LikeIsLabelOne}) {
        CHECK(contrastive_loss(d, y, 1.0, c) >= 0.0);
        const double fd = (contrastive_loss(d + 1e-6, y, 1.0, c) - contrastive_loss(d - 1e-6, y, 1.0, c)) / 2e-6;
        CHECK(std::abs(contrastive_loss_grad(d, y, 1.0, c) - fd) < 1e-6);
      }
}

TEST_CASE("triplet enumeration") {
  const auto log = tiny_log();
  const auto s = sample_triplets(log, 2, 1);
  CHECK(s.unique_available == 2);
  CHECK_FALSE(s.warning.has_value());
  std::set<std::pair<UserId, UserId>> got;
  for (const auto& t : s.triplets) {
    CHECK(t.judge == uid("x1"));
    CHECK(t.negative.user == uid("y3"));
    got.insert({t.anchor.user, t.positive.user});
  }
  CHECK(got == std::set<std::pair<UserId, UserId>>{{uid("y1"), uid("y2")}, {uid("y2"), uid("y1")}});
}

TEST_CASE("oversampling falls back to replacement with a warning") {
  const auto s = sample_triplets(tiny_log(), 5, 1);
  CHECK(s.triplets.size() == 5);
  CHECK(s.warning.has_value());
}

TEST_CASE("triplet sampling validity and determinism") {
  const auto world = generate_world(fixtures::small_world(2, 30));
  const auto log = validate_events(sample_events(world, 3000, 5));
  const auto a = sample_triplets(log, 400, 9, Side::Y, 2);
  const auto b = sample_triplets(log, 400, 9, Side::Y, 2);
  CHECK(a.triplets == b.triplets);
  CHECK(a.triplets != sample_triplets(log, 400, 10, Side::Y, 2).triplets);
  std::set<Triplet> distinct(a.triplets.begin(), a.triplets.end());
  CHECK(distinct.size() == a.triplets.size());
  for (const auto& t : a.triplets) {
    CHECK(t.judge.side == Side::Y);
    CHECK(t.anchor.user != t.positive.user);
    CHECK(t.anchor.variant < 2);
    int anchor = 0, positive = 0, negative = 0;
    for (const auto& e : log.events()) {
      if (e.actor != t.judge) continue;
      if (e.target == t.anchor.user && e.kind != EventKind::Dislike) ++anchor;
      if (e.target == t.positive.user && e.kind != EventKind::Dislike) ++positive;
      if (e.target == t.negative.user && e.kind == EventKind::Dislike) ++negative;
    }
    CHECK(anchor == 1);
    CHECK(positive == 1);
    CHECK(negative == 1);
  }
}

TEST_CASE("no eligible judge") {
  const auto log = validate_events({ev(0, "x1", "y1", EventKind::Like), ev(1, "x1", "y2", EventKind::Like)});
  CHECK_THROWS_AS(sample_triplets(log, 3, 1), InsufficientJudges);
  CHECK_THROWS_AS(sample_triplets(tiny_log(), 3, 1, Side::Y), InsufficientJudges);
}

TEST_CASE("bce batch gradients match central differences") {
  auto net = mini_net(3);
  const auto images = random_images(net.encoder.spec().input.size(), 12, 4);
  LossConfig cfg;
  net.encoder.zero_grad();
  HeadGrad hg;
  siamese_batch_loss(net, images, cfg, &hg);
  const auto loss = [&] { return siamese_batch_loss(net, images, cfg, nullptr); };
  const auto r = fixtures::check_param_grads(net.encoder.params(), loss, 200, 5);
  MESSAGE("encoder max relative error " << r.max_rel_error << " over " << r.coordinates);
  CHECK(r.coordinates >= 100);
  CHECK(r.max_rel_error <= 1e-4);

  double worst = 0;
  for (std::size_t i = 0; i <= net.head.weights.size(); ++i) {
    double& w = i < net.head.weights.size() ? net.head.weights[i] : net.head.bias;
    const double g = i < net.head.weights.size() ? hg.weights[i] : hg.bias;
    const double saved = w;
    w = saved + 1e-6;
    const double up = loss();
    w = saved - 1e-6;
    const double down = loss();
    w = saved;
    worst = std::max(worst, fixtures::rel_error(g, (up - down) / 2e-6));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("contrastive batch gradients match central differences") {
  for (auto convention : {ContrastiveConvention::LikeIsSimilar, ContrastiveConvention::LikeIsLabelOne}) {
    auto net = mini_net(6);
    const auto images = random_images(net.encoder.spec().input.size(), 12, 7);
    LossConfig cfg;
    cfg.kind = LossKind::Contrastive;
    cfg.margin = 1.0;
    cfg.convention = convention;
    net.encoder.zero_grad();
    HeadGrad hg;
    siamese_batch_loss(net, images, cfg, &hg);
    const auto r = fixtures::check_param_grads(
        net.encoder.params(), [&] { return siamese_batch_loss(net, images, cfg, nullptr); }, 200, 8);
    MESSAGE("contrastive max relative error " << r.max_rel_error);
    CHECK(r.coordinates >= 100);
    CHECK(r.max_rel_error <= 1e-4);
    // the head still learns from BCE on the embedding differences
    LossConfig bce;
    double& w = net.head.weights[1];
    const double saved = w;
    w = saved + 1e-6;
    const double up = siamese_batch_loss(net, images, bce, nullptr);
    w = saved - 1e-6;
    const double down = siamese_batch_loss(net, images, bce, nullptr);
    w = saved;
    CHECK(fixtures::rel_error(hg.weights[1], (up - down) / 2e-6) <= 1e-4);
  }
}

TEST_CASE("uninitialized weights are refused") {
  SiameseNet<double> net(nn::EncoderSpec::miniature());
  const auto images = random_images(net.encoder.spec().input.size(), 3, 1);
  CHECK_THROWS_AS(siamese_batch_loss(net, images, LossConfig{}, nullptr), UninitializedWeights);
}

namespace {

struct TrainFixture {
  SyntheticWorld world;
  RenderedImageProvider images;
  std::vector<Triplet> triplets;

  TrainFixture()
      : world([] {
          auto p = fixtures::small_world(21, 40);
          p.d_traits = 2;
          return generate_world(p);
        }()),
        images(world) {
    const auto log = validate_events(sample_events(world, 4000, 2));
    triplets = sample_triplets(log, 200, 3, Side::X, images.variants_per_user()).triplets;
  }
};

}  // namespace

TEST_CASE("training lowers the loss and round-trips through a checkpoint") {
  TrainFixture f;
  SiameseTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 32;
  cfg.seed = 4;
  cfg.loss.learning_rate = 1e-3;
  const auto model = train_siamese(f.triplets, f.images, cfg, Side::X);
  REQUIRE(model.loss_log.size() == 5);
  MESSAGE("loss log first " << model.loss_log.front() << " last " << model.loss_log.back());
  CHECK(model.loss_log.back() < model.loss_log.front());

  const auto ck = model.to_checkpoint();
  const auto back = SiameseCheckpoint::from_checkpoint(Checkpoint::deserialize(ck.serialize()));
  CHECK(back.to_checkpoint().serialize() == ck.serialize());
  CHECK(back.judge_side() == Side::X);
  CHECK(back.loss_log == model.loss_log);
  const auto img = f.images.tensor({{Side::Y, 3}, 0});
  const auto other = f.images.tensor({{Side::Y, 4}, 1});
  CHECK(back.encode(img) == model.encode(img));
  CHECK(back.encode(img) == back.encode(img));
  CHECK(back.pair_probability(img, other) == model.pair_probability(img, other));

  const auto again = train_siamese(f.triplets, f.images, cfg, Side::X);
  CHECK(again.to_checkpoint().serialize() == ck.serialize());
}

TEST_CASE("zero epochs returns the initialization") {
  TrainFixture f;
  SiameseTrainConfig cfg;
  cfg.epochs = 0;
  cfg.seed = 77;
  const auto model = train_siamese(f.triplets, f.images, cfg, Side::Y);
  const SiameseCheckpoint init(nn::EncoderSpec::face_encoder(), Side::Y, 77);
  const auto a = model.to_checkpoint();
  const auto b = init.to_checkpoint();
  REQUIRE(a.tensors().size() == b.tensors().size());
  for (std::size_t i = 0; i < a.tensors().size(); ++i) CHECK(a.tensors()[i].values == b.tensors()[i].values);
  CHECK(model.loss_log.empty());
  CHECK_THROWS_AS(train_siamese({}, f.images, cfg, Side::Y), std::invalid_argument);
}

TEST_CASE("triplet accuracy counts strict wins") {
  TrainFixture f;
  const SiameseCheckpoint init(nn::EncoderSpec::face_encoder(), Side::X, 1);
  const double acc = triplet_accuracy(init, f.triplets, f.images);
  int wins = 0;
  for (const auto& t : f.triplets) {
    const auto a = f.images.tensor(t.anchor);
    wins += init.pair_probability(a, f.images.tensor(t.positive)) > init.pair_probability(a, f.images.tensor(t.negative));
  }
  CHECK(acc == doctest::Approx(double(wins) / f.triplets.size()));
}
