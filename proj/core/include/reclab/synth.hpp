#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reclab/events.hpp"
#include "reclab/history.hpp"
#include "reclab/image.hpp"

namespace reclab {

/// Parameters of a synthetic dating world. Everything downstream is a pure
/// function of these and the sampler seed.
struct WorldParams {
  std::uint64_t seed = 1;
  std::uint32_t n_x = 100;
  std::uint32_t n_y = 100;
  std::uint32_t d_traits = 8;
  /// Per-tick norm of each user's taste drift.
  double drift_rate = 0.0;
  /// a in sigmoid(a * <taste, trait> + b * popularity).
  double like_sharpness = 10.0;
  /// b in the same expression.
  double popularity_weight = 0.5;
  Tick year_ticks = kDefaultYearTicks;
  std::uint32_t n_variants = 2;
  /// Scale of per-variant pose/lighting perturbation; 0 renders every variant identically.
  double render_noise = 1.0;
  std::uint32_t attribute_count = 4;
  std::uint32_t attribute_buckets = 4;
  /// Mixing weight of real traits into the categorical attributes; 0 leaves them uninformative.
  double attribute_signal = 0.0;

  friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

struct SyntheticUser {
  UserId id;
  std::vector<double> trait;  // unit norm
  std::vector<double> taste;  // unit norm at t = 0
  std::vector<double> drift;  // per-tick change of taste, norm <= drift_rate
  double popularity = 0.0;    // in [-1, 1]
  std::vector<int> attributes;
};

struct RenderedImage {
  RgbImage pixels;  // 100x100
  BBox face_bbox;
  UserId source_user;
  std::uint64_t variant_seed = 0;
};

/// Renders the abstract face schematic for a trait vector. Geometry (outline, eye
/// spacing and size, mouth) and colour fields are smooth functions of the traits;
/// the variant seed perturbs position and lighting scaled by `noise`.
RenderedImage render_traits(std::span<const double> trait, std::uint64_t variant_seed,
                            double noise);

class SyntheticWorld {
 public:
  SyntheticWorld() = default;
  /// Assembles a world from explicit users (tests use this to pin traits).
  SyntheticWorld(WorldParams params, std::vector<SyntheticUser> xs, std::vector<SyntheticUser> ys);

  const WorldParams& params() const noexcept { return params_; }
  const std::vector<SyntheticUser>& users(Side side) const noexcept { return users_[side_index(side)]; }
  const SyntheticUser& user(const UserId& id) const;
  std::size_t user_count() const noexcept { return users_[0].size() + users_[1].size(); }

  /// normalize(taste + t * drift)
  std::vector<double> taste_at(const UserId& id, Tick t) const;

  double oracle_like_prob(const UserId& actor, const UserId& target, Tick t) const;
  /// Product of both directed like probabilities; symmetric.
  double oracle_match_prob(const UserId& x, const UserId& y, Tick t) const;

  RenderedImage render_face(const UserId& id, std::uint64_t variant_seed) const;
  /// Variant seed of the `variant`-th stored photo of a user.
  static std::uint64_t photo_seed(const UserId& id, std::uint32_t variant);

 private:
  WorldParams params_;
  std::vector<SyntheticUser> users_[2];
};

SyntheticWorld generate_world(const WorldParams& params);

struct SamplerOptions {
  /// Chance per tick of answering a pending LIKE instead of browsing.
  double response_share = 0.5;
  /// Fraction of LIKEs that never get answered.
  double ignore_rate = 0.05;
  Tick tick_stride = 1;

  friend bool operator==(const SamplerOptions&, const SamplerOptions&) = default;
};

/// Simulates browsing: each tick either a pending LIKE is answered (RECIPROCATE or
/// DISLIKE, by the target's own oracle probability) or a random user views a random
/// opposite-side user, emitting a LIKE with the oracle probability. A view of someone
/// who already sent a pending LIKE answers it. Stops after n_events emissions.
std::vector<PreferenceEvent> sample_events(const SyntheticWorld& world, std::size_t n_events,
                                           std::uint64_t seed, const SamplerOptions& options = {});

nlohmann::json to_json(const WorldParams& p);
WorldParams world_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SamplerOptions& o);
SamplerOptions sampler_options_from_json(const nlohmann::json& j);

/// Versioned manifest sufficient to regenerate the world and its event log exactly.
struct WorldManifest {
  static constexpr int kVersion = 1;
  WorldParams world;
  SamplerOptions sampler;
  std::size_t n_events = 0;
  std::uint64_t event_seed = 0;
};

nlohmann::json to_json(const WorldManifest& m);
WorldManifest world_manifest_from_json(const nlohmann::json& j);

}  // namespace reclab
