#include <doctest.h>

#include <random>

#include "reclab/error.hpp"
#include "reclab/imgproc.hpp"

using namespace reclab;

namespace {

RgbImage random_image(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  RgbImage img(w, h);
  for (auto& v : img.data) v = u(rng);
  return img;
}

Vec128 filled(double v) {
  Vec128 out;
  out.fill(v);
  return out;
}

}  // namespace

TEST_CASE("full-frame crop of a 100x100 image is the identity") {
  const auto img = random_image(100, 100, 1);
  const auto t = crop_and_scale(img, {0, 0, 100, 100});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x) REQUIRE(t.at(c, y, x) == img.at(y, x, c));
  // idempotent: feeding the result back changes nothing
  RgbImage back(100, 100);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x) back.at(y, x, c) = t.at(c, y, x);
  CHECK(crop_and_scale(back, {0, 0, 100, 100}) == t);
}

TEST_CASE("centred box of a 200x200 image returns the centre content") {
  const auto img = random_image(200, 200, 2);
  const auto t = crop_and_scale(img, {50, 50, 100, 100});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 100; ++y)
      for (int x = 0; x < 100; ++x) REQUIRE(t.at(c, y, x) == img.at(y + 50, x + 50, c));
}

TEST_CASE("downscaling a constant image stays constant and in range") {
  RgbImage img(300, 240);
  for (int y = 0; y < 240; ++y)
    for (int x = 0; x < 300; ++x) {
      img.at(y, x, 0) = 0.25f;
      img.at(y, x, 1) = 1.0f;
      img.at(y, x, 2) = 0.0f;
    }
  const auto t = crop_and_scale(img, {10, 20, 200, 150});
  for (int y = 0; y < 100; ++y)
    for (int x = 0; x < 100; ++x) {
      CHECK(t.at(0, y, x) == doctest::Approx(0.25f));
      CHECK(t.at(1, y, x) == doctest::Approx(1.0f));
      CHECK(t.at(2, y, x) == doctest::Approx(0.0f));
    }
  const auto r = crop_and_scale(random_image(160, 160, 3), {13.5, 7.25, 91.0, 120.0});
  for (float v : r.values) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("bad boxes are rejected") {
  const auto img = random_image(100, 100, 4);
  CHECK_THROWS_AS(crop_and_scale(img, {10, 10, 0, 20}), DegenerateBbox);
  CHECK_THROWS_AS(crop_and_scale(img, {10, 10, 20, 0}), DegenerateBbox);
  CHECK_THROWS_AS(crop_and_scale(img, {90, 10, 20, 20}), std::out_of_range);
  CHECK_THROWS_AS(crop_and_scale(img, {-1, 0, 20, 20}), std::out_of_range);
}

TEST_CASE("crop is deterministic") {
  const auto img = random_image(180, 130, 5);
  CHECK(crop_and_scale(img, {20, 5, 100, 70}) == crop_and_scale(img, {20, 5, 100, 70}));
}

TEST_CASE("padding examples") {
  SUBCASE("full") {
    std::vector<Vec128> v(15, filled(1.0));
    const auto p = pad_and_mask(v);
    CHECK(std::count(p.mask.begin(), p.mask.end(), true) == 15);
  }
  SUBCASE("empty") {
    const auto p = pad_and_mask({});
    REQUIRE(p.length() == 15);
    for (std::size_t i = 0; i < 15; ++i) {
      CHECK_FALSE(p.mask[i]);
      CHECK(p.steps[i] == filled(0.0));
    }
  }
  SUBCASE("three") {
    std::vector<Vec128> v{filled(1), filled(2), filled(3)};
    const auto p = pad_and_mask(v);
    for (std::size_t i = 0; i < 12; ++i) {
      CHECK_FALSE(p.mask[i]);
      CHECK(p.steps[i] == filled(0.0));
    }
    for (std::size_t i = 12; i < 15; ++i) {
      CHECK(p.mask[i]);
      CHECK(p.steps[i] == v[i - 12]);
    }
  }
  SUBCASE("too long") {
    std::vector<Vec128> v(16, filled(1.0));
    CHECK_THROWS_AS(pad_and_mask(v), SequenceTooLong);
  }
}

TEST_CASE("masked positions round-trip the input for every length") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n;
  for (std::size_t len = 0; len <= 15; ++len) {
    std::vector<Vec128> v(len);
    for (auto& s : v)
      for (auto& x : s) x = n(rng);
    const auto p = pad_and_mask(v);
    std::vector<Vec128> kept;
    bool seen_true = false;
    for (std::size_t i = 0; i < p.length(); ++i) {
      if (p.mask[i]) {
        kept.push_back(p.steps[i]);
        seen_true = true;
      } else {
        CHECK_FALSE(seen_true);  // true entries form a suffix
        CHECK(p.steps[i] == filled(0.0));
      }
    }
    CHECK(kept == v);
  }
}
