#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "reclab/checkpoint.hpp"
#include "reclab/events.hpp"
#include "reclab/history.hpp"
#include "reclab/tirr.hpp"

namespace reclab {

/// 2ab / (a + b); 0 when both are 0.
double harmonic_reciprocal(double q_xy, double q_yx);

// ---------------------------------------------------------------- RECON-lite

using AttributeTable = std::map<UserId, std::vector<int>>;

/// Per user: how often they expressed a positive preference (liked) or any preference
/// (seen) toward someone holding value v of attribute a, at index a * buckets + v.
struct AttributeProfile {
  std::vector<std::uint32_t> liked, seen;
  std::uint32_t expressions = 0;
};

class ReconLite {
 public:
  static constexpr const char* kKind = "recon_lite";

  ReconLite() = default;
  /// Profiles from `train` only. Attributes are looked up in `attributes`.
  static ReconLite fit(const ValidatedEventLog& train, const AttributeTable& attributes,
                       double alpha = 1.0);

  /// Smoothed like rate of x toward y's attribute values, averaged over attributes.
  /// Users without profile or attributes fall back to the global like rate.
  double directed(const UserId& x, const UserId& y) const;
  double score(const UserId& x, const UserId& y) const;
  double global_like_rate() const noexcept { return global_rate_; }
  const AttributeProfile* profile(const UserId& u) const;

  nlohmann::json provenance = nlohmann::json::object();
  Checkpoint to_checkpoint() const;
  static ReconLite from_checkpoint(const Checkpoint& ck);

 private:
  AttributeTable attributes_;
  std::map<UserId, AttributeProfile> profiles_;
  std::size_t attribute_count_ = 0;
  int buckets_ = 0;
  double alpha_ = 1.0;
  double global_rate_ = 0.5;
};

// ---------------------------------------------------------------- ImRec-lite

class ImRecLite {
 public:
  static constexpr const char* kKind = "imrec_lite";

  ImRecLite(const SiamesePair& siamese, const EmbeddingTable& embeddings,
            std::size_t max_anchors = 5)
      : siamese_(&siamese), embeddings_(&embeddings), max_anchors_(max_anchors) {}

  /// Mean head probability over the judge's most recent positive anchors against the
  /// candidate; 0.5 without anchors.
  double directed(const PreferenceHistory& judge_history, const UserId& candidate) const;
  double score(const PreferenceHistory& history_x, const UserId& x,
               const PreferenceHistory& history_y, const UserId& y) const;
  std::size_t max_anchors() const noexcept { return max_anchors_; }

  Checkpoint to_checkpoint() const;
  /// Checks the recorded Siamese digests against `siamese`.
  static std::size_t max_anchors_from_checkpoint(const Checkpoint& ck, const SiamesePair& siamese);

 private:
  const SiamesePair* siamese_;
  const EmbeddingTable* embeddings_;
  std::size_t max_anchors_;
};

// ---------------------------------------------------------------- LFRR-lite

struct LfrrConfig {
  int dimension = 16;
  std::size_t epochs = 100;
  double learning_rate = 0.05;
  double regularization = 0.05;
  double init_scale = 0.1;
  std::uint64_t seed = 1;
};

/// One directed latent factor model: sigmoid(u_actor . v_target + b_actor + c_target + g).
struct DirectedFactors {
  std::map<UserId, std::size_t> actor_index, target_index;
  DMatrix actors, targets;  // d x n
  DVector actor_bias, target_bias;
  double global_bias = 0.0;

  double probability(const UserId& actor, const UserId& target) const;
};

struct LatentFactors {
  LfrrConfig config;
  DirectedFactors x_to_y, y_to_x;
  std::vector<double> loss_log;
  nlohmann::json provenance = nlohmann::json::object();

  static constexpr const char* kKind = "lfrr_lite";
  const DirectedFactors& direction(Side actor) const { return actor == Side::X ? x_to_y : y_to_x; }
  Checkpoint to_checkpoint() const;
  static LatentFactors from_checkpoint(const Checkpoint& ck);
};

/// Fits both directed models by SGD on BCE; positive expressions are 1, DISLIKE is 0.
/// Throws Divergence on a non-finite loss.
LatentFactors lfrr_lite_train(const ValidatedEventLog& train, const LfrrConfig& config);
double lfrr_lite_score(const UserId& x, const UserId& y, const LatentFactors& factors);

}  // namespace reclab
