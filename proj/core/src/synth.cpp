#include "reclab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "reclab/error.hpp"
#include "reclab/imgproc.hpp"

namespace reclab {

namespace {

constexpr std::size_t kVisualChannels = 8;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void normalize(std::vector<double>& v) {
  double norm = 0.0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  if (norm > 0.0) {
    for (double& x : v) x /= norm;
  }
}

std::vector<double> unit_gaussian(std::mt19937_64& rng, std::size_t d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(d);
  for (auto& x : v) x = normal(rng);
  normalize(v);
  return v;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double smooth_step(double signed_distance, double softness) {
  return 1.0 / (1.0 + std::exp(signed_distance / softness));
}

struct Rgb {
  double r, g, b;
};

void blend(Rgb& dst, const Rgb& src, double alpha) {
  dst.r += alpha * (src.r - dst.r);
  dst.g += alpha * (src.g - dst.g);
  dst.b += alpha * (src.b - dst.b);
}

}  // namespace

RenderedImage render_traits(std::span<const double> trait, std::uint64_t variant_seed,
                            double noise) {
  // Fold the trait vector onto the schematic's visual channels, scaled so a unit
  // vector gives per-channel values of order one.
  std::array<double, kVisualChannels> f{};
  const double scale = std::sqrt(static_cast<double>(trait.size()));
  // Short trait vectors repeat across channels.
  const std::size_t n = std::max(trait.size(), kVisualChannels);
  for (std::size_t k = 0; k < n && !trait.empty(); ++k) f[k % kVisualChannels] += trait[k % trait.size()] * scale;
  for (auto& v : f) v = std::clamp(v, -2.5, 2.5);

  std::mt19937_64 rng(splitmix64(variant_seed));
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const double dx = 2.0 * noise * unit(rng);
  const double dy = 2.0 * noise * unit(rng);
  const double light = 1.0 + 0.04 * noise * unit(rng);

  const double cx = 50.0 + dx;
  const double cy = 50.0 + dy;
  const double rx = 27.0 + 2.2 * f[0];
  const double ry = 33.0 + 2.2 * f[1];
  const Rgb skin{0.80 + 0.045 * f[2], 0.62 + 0.045 * f[3], 0.52 - 0.03 * (f[2] + f[3])};
  const Rgb background{0.35, 0.42, 0.50};
  const Rgb hair{0.35 + 0.07 * f[7], 0.25 + 0.03 * f[7], 0.15 - 0.03 * f[7]};
  const double eye_dx = 10.0 + 1.8 * f[4];
  const double eye_y = cy - 8.0;
  const double eye_sigma = 2.4 + 0.4 * f[5];
  const Rgb iris{0.20 + 0.08 * f[5], 0.22, 0.40 - 0.08 * f[5]};
  const double mouth_y = cy + 14.0;
  const double mouth_half = 8.0 + 2.0 * f[6];
  const Rgb lips{0.68, 0.22, 0.26};

  RenderedImage out;
  out.pixels = RgbImage(kImageSide, kImageSide);
  out.variant_seed = variant_seed;
  for (int y = 0; y < kImageSide; ++y) {
    for (int x = 0; x < kImageSide; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      Rgb c = background;
      // Hair cap: a larger ellipse above the face.
      const double hq = std::hypot((px - cx) / (rx + 5.0), (py - cy + 6.0) / (ry + 4.0));
      blend(c, hair, smooth_step((hq - 1.0) * (ry + 4.0), 1.0) * (py < cy ? 1.0 : 0.0));
      const double q = std::hypot((px - cx) / rx, (py - cy) / ry);
      blend(c, skin, smooth_step((q - 1.0) * std::min(rx, ry), 1.0));
      for (double side : {-1.0, 1.0}) {
        const double r2 = std::pow(px - (cx + side * eye_dx), 2) + std::pow(py - eye_y, 2);
        blend(c, iris, std::exp(-r2 / (2.0 * eye_sigma * eye_sigma)));
      }
      const double mx = (px - cx) / mouth_half;
      const double my = (py - mouth_y) / 1.8;
      blend(c, lips, std::exp(-0.5 * (mx * mx * mx * mx + my * my)));
      out.pixels.at(y, x, 0) = static_cast<float>(std::clamp(c.r * light, 0.0, 1.0));
      out.pixels.at(y, x, 1) = static_cast<float>(std::clamp(c.g * light, 0.0, 1.0));
      out.pixels.at(y, x, 2) = static_cast<float>(std::clamp(c.b * light, 0.0, 1.0));
    }
  }
  const double half = 40.0;
  const double x0 = std::clamp(cx - half, 0.0, kImageSide - 2 * half);
  const double y0 = std::clamp(cy - half, 0.0, kImageSide - 2 * half);
  out.face_bbox = {x0, y0, 2 * half, 2 * half};
  return out;
}

SyntheticWorld::SyntheticWorld(WorldParams params, std::vector<SyntheticUser> xs,
                               std::vector<SyntheticUser> ys)
    : params_(params) {
  users_[0] = std::move(xs);
  users_[1] = std::move(ys);
  for (int s = 0; s < 2; ++s) {
    for (std::size_t i = 0; i < users_[s].size(); ++i) {
      const auto& u = users_[s][i];
      if (side_index(u.id.side) != s || u.id.index != i) {
        throw std::invalid_argument("user ids must be dense per side");
      }
    }
  }
}

const SyntheticUser& SyntheticWorld::user(const UserId& id) const {
  const auto& side = users_[side_index(id.side)];
  if (id.index >= side.size()) throw std::out_of_range("unknown user " + id.str());
  return side[id.index];
}

std::vector<double> SyntheticWorld::taste_at(const UserId& id, Tick t) const {
  const auto& u = user(id);
  std::vector<double> taste = u.taste;
  if (params_.drift_rate != 0.0 && t != 0) {
    for (std::size_t k = 0; k < taste.size(); ++k) taste[k] += static_cast<double>(t) * u.drift[k];
    normalize(taste);
  }
  return taste;
}

double SyntheticWorld::oracle_like_prob(const UserId& actor, const UserId& target, Tick t) const {
  if (actor.side == target.side) {
    throw std::invalid_argument("oracle_like_prob: " + actor.str() + " and " + target.str() +
                                " are on the same side");
  }
  const auto taste = taste_at(actor, t);
  const auto& other = user(target);
  double dot = 0.0;
  for (std::size_t k = 0; k < taste.size(); ++k) dot += taste[k] * other.trait[k];
  return sigmoid(params_.like_sharpness * dot + params_.popularity_weight * other.popularity);
}

double SyntheticWorld::oracle_match_prob(const UserId& x, const UserId& y, Tick t) const {
  const double a = oracle_like_prob(x, y, t);
  const double b = oracle_like_prob(y, x, t);
  return a * b;
}

RenderedImage SyntheticWorld::render_face(const UserId& id, std::uint64_t variant_seed) const {
  auto image = render_traits(user(id).trait, variant_seed, params_.render_noise);
  image.source_user = id;
  return image;
}

std::uint64_t SyntheticWorld::photo_seed(const UserId& id, std::uint32_t variant) {
  return splitmix64((static_cast<std::uint64_t>(id.side) << 62) ^
                    (static_cast<std::uint64_t>(id.index) << 20) ^ variant);
}

SyntheticWorld generate_world(const WorldParams& p) {
  if (p.n_x < 1 || p.n_y < 1) throw std::invalid_argument("generate_world needs n_x, n_y >= 1");
  if (p.d_traits < 1) throw std::invalid_argument("generate_world needs d_traits >= 1");
  std::mt19937_64 rng(p.seed);
  std::uniform_real_distribution<double> pop(-1.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<SyntheticUser> sides[2];
  for (Side side : {Side::X, Side::Y}) {
    const std::uint32_t n = side == Side::X ? p.n_x : p.n_y;
    auto& users = sides[side_index(side)];
    users.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
      SyntheticUser u;
      u.id = {side, i};
      u.trait = unit_gaussian(rng, p.d_traits);
      u.taste = unit_gaussian(rng, p.d_traits);
      u.drift = unit_gaussian(rng, p.d_traits);
      for (double& v : u.drift) v *= p.drift_rate;
      u.popularity = pop(rng);
      u.attributes.resize(p.attribute_count);
      const double scale = std::sqrt(static_cast<double>(p.d_traits));
      for (std::uint32_t a = 0; a < p.attribute_count; ++a) {
        const double own = normal(rng);
        const double signal = u.trait[a % p.d_traits] * scale;
        const double mixed = (1.0 - p.attribute_signal) * own + p.attribute_signal * signal;
        const double cdf = 0.5 * std::erfc(-mixed / std::numbers::sqrt2);
        u.attributes[a] = std::min<int>(static_cast<int>(cdf * p.attribute_buckets),
                                        static_cast<int>(p.attribute_buckets) - 1);
      }
      users.push_back(std::move(u));
    }
  }
  return SyntheticWorld(p, std::move(sides[0]), std::move(sides[1]));
}

std::vector<PreferenceEvent> sample_events(const SyntheticWorld& world, std::size_t n_events,
                                           std::uint64_t seed, const SamplerOptions& options) {
  std::vector<PreferenceEvent> events;
  if (n_events == 0) return events;
  events.reserve(n_events);

  struct Pending {
    UserId liker, liked;
  };
  const auto key = [](const UserId& a, const UserId& b) {
    const auto pack = [](const UserId& u) {
      return (static_cast<std::uint64_t>(u.side) << 31) | u.index;
    };
    return (pack(a) << 32) | pack(b);
  };
  std::vector<Pending> pending;
  std::unordered_map<std::uint64_t, std::size_t> pending_index;
  std::unordered_set<std::uint64_t> acted;  // directed (actor, target) that already expressed

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::uint32_t n_x = world.params().n_x;
  const std::uint32_t total = n_x + world.params().n_y;
  std::uniform_int_distribution<std::uint32_t> pick_user(0, total - 1);

  const auto take_pending = [&](std::size_t i) {
    Pending p = pending[i];
    pending_index.erase(key(p.liker, p.liked));
    if (i + 1 != pending.size()) {
      pending[i] = pending.back();
      pending_index[key(pending[i].liker, pending[i].liked)] = i;
    }
    pending.pop_back();
    return p;
  };
  const auto respond = [&](const Pending& p, Tick t) {
    const double prob = world.oracle_like_prob(p.liked, p.liker, t);
    const EventKind kind = unit(rng) < prob ? EventKind::Reciprocate : EventKind::Dislike;
    acted.insert(key(p.liked, p.liker));
    events.push_back({t, p.liked, p.liker, kind});
  };

  const std::size_t max_steps = 1000 * n_events + 100000;
  for (std::size_t step = 0; step < max_steps && events.size() < n_events; ++step) {
    const Tick t = static_cast<Tick>(step) * options.tick_stride;
    if (!pending.empty() && unit(rng) < options.response_share) {
      std::uniform_int_distribution<std::size_t> pick(0, pending.size() - 1);
      respond(take_pending(pick(rng)), t);
      continue;
    }
    const std::uint32_t a = pick_user(rng);
    const UserId actor = a < n_x ? UserId{Side::X, a} : UserId{Side::Y, a - n_x};
    const std::uint32_t n_other = actor.side == Side::X ? world.params().n_y : n_x;
    std::uniform_int_distribution<std::uint32_t> pick_target(0, n_other - 1);
    const UserId target{opposite(actor.side), pick_target(rng)};

    if (auto it = pending_index.find(key(target, actor)); it != pending_index.end()) {
      respond(take_pending(it->second), t);
      continue;
    }
    if (acted.contains(key(actor, target))) continue;
    if (unit(rng) < world.oracle_like_prob(actor, target, t)) {
      acted.insert(key(actor, target));
      events.push_back({t, actor, target, EventKind::Like});
      if (!acted.contains(key(target, actor)) && unit(rng) >= options.ignore_rate) {
        pending_index[key(actor, target)] = pending.size();
        pending.push_back({actor, target});
      }
    }
  }
  return events;
}

nlohmann::json to_json(const WorldParams& p) {
  return {{"seed", p.seed},
          {"n_x", p.n_x},
          {"n_y", p.n_y},
          {"d_traits", p.d_traits},
          {"drift_rate", p.drift_rate},
          {"like_sharpness", p.like_sharpness},
          {"popularity_weight", p.popularity_weight},
          {"year_ticks", p.year_ticks},
          {"n_variants", p.n_variants},
          {"render_noise", p.render_noise},
          {"attribute_count", p.attribute_count},
          {"attribute_buckets", p.attribute_buckets},
          {"attribute_signal", p.attribute_signal}};
}

WorldParams world_params_from_json(const nlohmann::json& j) {
  WorldParams d;
  WorldParams p;
  p.seed = j.value("seed", d.seed);
  p.n_x = j.value("n_x", d.n_x);
  p.n_y = j.value("n_y", d.n_y);
  p.d_traits = j.value("d_traits", d.d_traits);
  p.drift_rate = j.value("drift_rate", d.drift_rate);
  p.like_sharpness = j.value("like_sharpness", d.like_sharpness);
  p.popularity_weight = j.value("popularity_weight", d.popularity_weight);
  p.year_ticks = j.value("year_ticks", d.year_ticks);
  p.n_variants = j.value("n_variants", d.n_variants);
  p.render_noise = j.value("render_noise", d.render_noise);
  p.attribute_count = j.value("attribute_count", d.attribute_count);
  p.attribute_buckets = j.value("attribute_buckets", d.attribute_buckets);
  p.attribute_signal = j.value("attribute_signal", d.attribute_signal);
  return p;
}

nlohmann::json to_json(const SamplerOptions& o) {
  return {{"response_share", o.response_share},
          {"ignore_rate", o.ignore_rate},
          {"tick_stride", o.tick_stride}};
}

SamplerOptions sampler_options_from_json(const nlohmann::json& j) {
  SamplerOptions d;
  SamplerOptions o;
  o.response_share = j.value("response_share", d.response_share);
  o.ignore_rate = j.value("ignore_rate", d.ignore_rate);
  o.tick_stride = j.value("tick_stride", d.tick_stride);
  return o;
}

nlohmann::json to_json(const WorldManifest& m) {
  return {{"format", "reclab-world"},
          {"version", WorldManifest::kVersion},
          {"world", to_json(m.world)},
          {"sampler", to_json(m.sampler)},
          {"n_events", m.n_events},
          {"event_seed", m.event_seed}};
}

WorldManifest world_manifest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "reclab-world") throw FormatError("not a reclab world manifest");
  if (j.value("version", 0) != WorldManifest::kVersion) {
    throw FormatError("unsupported world manifest version");
  }
  WorldManifest m;
  m.world = world_params_from_json(j.at("world"));
  m.sampler = sampler_options_from_json(j.at("sampler"));
  m.n_events = j.at("n_events").get<std::size_t>();
  m.event_seed = j.at("event_seed").get<std::uint64_t>();
  return m;
}

}  // namespace reclab
