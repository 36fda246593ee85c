#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "reclab/checkpoint.hpp"
#include "reclab/events.hpp"
#include "reclab/image_source.hpp"
#include "reclab/imgproc.hpp"
#include "reclab/nn/encoder.hpp"

namespace reclab {

/// Encoder output h for one image.
struct Embedding128 {
  Vec128 h{};
  friend bool operator==(const Embedding128&, const Embedding128&) = default;
};

/// Elementwise |h1 - h2|.
Vec128 distance(const Embedding128& a, const Embedding128& b);

/// Dense layer on the difference vector followed by a sigmoid: the probability that the
/// judge likes the second image given the first (an image they liked).
struct PreferenceHead {
  std::vector<double> weights = std::vector<double>(kEmbeddingDim, 0.0);
  double bias = 0.0;

  double logit(std::span<const double> diff) const;
  double probability(std::span<const double> diff) const;
};

double head_probability(const Vec128& diff, const PreferenceHead& head);

inline constexpr double kBceEpsilon = 1e-7;

/// -(y log p + (1 - y) log(1 - p)) with p clipped to [eps, 1 - eps].
double bce_loss(double p, int label);
/// d bce / d p; zero where the clip is active.
double bce_loss_grad(double p, int label);

enum class ContrastiveConvention {
  /// Liked pairs pay 0.5 d^2, disliked pairs pay 0.5 max(0, m - d)^2.
  LikeIsSimilar,
  /// The printed form with Y = 1 for Like: liked pairs pay the margin term.
  LikeIsLabelOne,
};

/// Contrastive loss on a scalar distance. label: 1 = Like, 0 = Dislike.
double contrastive_loss(double d, int label, double margin,
                        ContrastiveConvention convention = ContrastiveConvention::LikeIsSimilar);
double contrastive_loss_grad(double d, int label, double margin,
                             ContrastiveConvention convention = ContrastiveConvention::LikeIsSimilar);

/// (anchor, positive) liked by judge, negative disliked by the same judge.
struct Triplet {
  UserId judge;
  ImageRef anchor, positive, negative;

  friend auto operator<=>(const Triplet&, const Triplet&) = default;
};

struct TripletSample {
  std::vector<Triplet> triplets;
  std::size_t unique_available = 0;
  /// Set when n exceeded the number of distinct triplets and sampling fell back to
  /// drawing with replacement.
  std::optional<std::string> warning;
};

/// Draws triplets uniformly over all distinct (judge, anchor, positive, negative)
/// combinations of the log, optionally restricted to judges on one side. Positive
/// expressions are LIKE and RECIPROCATE, negatives are DISLIKE. Each image takes a
/// random stored variant. Throws InsufficientJudges if no judge has >= 2 positives and
/// >= 1 negative.
TripletSample sample_triplets(const ValidatedEventLog& log, std::size_t n, std::uint64_t seed,
                              std::optional<Side> judge_side = std::nullopt,
                              std::uint32_t variants_per_user = 1);

enum class LossKind { BCE, Contrastive };

struct LossConfig {
  LossKind kind = LossKind::BCE;
  double margin = 1.0;
  double learning_rate = 1e-4;
  ContrastiveConvention convention = ContrastiveConvention::LikeIsSimilar;
};

/// Encoder plus preference head. T = float in production, double for gradient checks.
template <class T>
struct SiameseNet {
  nn::Encoder<T> encoder;
  PreferenceHead head;

  explicit SiameseNet(nn::EncoderSpec spec)
      : encoder(std::move(spec)),
        head{std::vector<double>(static_cast<std::size_t>(encoder.spec().output_dim()), 0.0), 0.0} {}
};

/// Gradient of the head parameters.
struct HeadGrad {
  std::vector<double> weights;
  double bias = 0.0;
};

/// Mean loss over the 2B pairs of a batch of B triplets laid out as columns
/// [a0, p0, n0, a1, p1, n1, ...]. With grads requested, encoder parameter gradients are
/// accumulated and head gradients written to *head_grad. Training-mode forward; pass
/// `trace` to keep it for commit().
template <class T>
double siamese_batch_loss(SiameseNet<T>& net, const nn::Matrix<T>& images, const LossConfig& loss,
                          HeadGrad* head_grad, nn::ForwardTrace<T>* trace = nullptr);

struct SiameseTrainConfig {
  LossConfig loss;
  std::size_t epochs = 5;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
};

/// A trained (or freshly initialized) Siamese model for one judging side.
class SiameseCheckpoint {
 public:
  static constexpr const char* kKind = "siamese";

  SiameseCheckpoint();
  SiameseCheckpoint(nn::EncoderSpec spec, Side judge_side, std::uint64_t init_seed);

  const SiameseNet<float>& net() const noexcept { return net_; }
  SiameseNet<float>& net() noexcept { return net_; }
  Side judge_side() const noexcept { return judge_side_; }
  std::uint64_t init_seed() const noexcept { return init_seed_; }

  Embedding128 encode(const ImageTensor& image) const;
  std::vector<Embedding128> encode_batch(std::span<const ImageTensor> images) const;
  /// P(judge likes `candidate` | judge liked `anchor`).
  double pair_probability(const ImageTensor& anchor, const ImageTensor& candidate) const;

  std::vector<double> loss_log;
  SiameseTrainConfig train_config;
  nlohmann::json provenance = nlohmann::json::object();

  Checkpoint to_checkpoint() const;
  static SiameseCheckpoint from_checkpoint(const Checkpoint& ck);

 private:
  SiameseNet<float> net_;
  Side judge_side_ = Side::X;
  std::uint64_t init_seed_ = 0;
};

/// Trains a Siamese model on triplets whose judges sit on `judge_side`. Throws
/// Divergence on a non-finite loss, std::invalid_argument on an empty triplet list.
SiameseCheckpoint train_siamese(std::span<const Triplet> triplets, const ImageProvider& images,
                                const SiameseTrainConfig& config, Side judge_side,
                                const nn::EncoderSpec& spec = nn::EncoderSpec::face_encoder());

/// Fraction of triplets with p(anchor, positive) > p(anchor, negative).
double triplet_accuracy(const SiameseCheckpoint& model, std::span<const Triplet> triplets,
                        const ImageProvider& images);

}  // namespace reclab
