#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "reclab/checkpoint.hpp"
#include "reclab/history.hpp"
#include "reclab/image_source.hpp"
#include "reclab/imgproc.hpp"
#include "reclab/nn/layers.hpp"
#include "reclab/pairs.hpp"
#include "reclab/siamese.hpp"

namespace reclab {

struct TirrSpec {
  std::size_t sequence_length = kHistoryCap;
  int input_dim = static_cast<int>(kEmbeddingDim);
  int hidden = 128;
  int candidate_units = 128;
  int dense_units = 128;
  double dropout = 0.4;

  /// Sequence length 3, every width 4.
  static TirrSpec miniature();
  friend bool operator==(const TirrSpec&, const TirrSpec&) = default;
};

nlohmann::json to_json(const TirrSpec& spec);
TirrSpec tirr_spec_from_json(const nlohmann::json& j);

using DVector = Eigen::VectorXd;
using DMatrix = Eigen::MatrixXd;

/// Input weights W (4H x D), recurrent weights U (4H x H), bias b (4H). Gate rows are
/// stacked as input, forget, candidate write, output.
struct LstmWeights {
  DMatrix W, U;
  DVector b;
};

struct LstmState {
  DVector s, h;
  DVector f, i, write, o;

  static LstmState zero(int hidden);
};

/// Pins gates to fixed values instead of computing them.
struct GateForce {
  std::optional<double> forget, input;
};

/// One cell update: s = f * s_prev + i * write, h = o * tanh(s). A masked step returns
/// the previous state unchanged.
LstmState lstm_step(const LstmState& prev, const DVector& input, const LstmWeights& w,
                    bool masked = false, const GateForce* force = nullptr);

/// One direction: the judge's padded history of step vectors against a candidate,
/// plus the candidate's own embedding.
struct DirectedInput {
  PaddedSequence history;
  Vec128 candidate{};
};

/// Both directions of a pair x, y plus its label.
struct PairInput {
  UserId x, y;
  DirectedInput x_to_y, y_to_x;
  int label = 0;
};

/// Columns of a batched forward pass. Sequences are right-aligned to a common length.
struct TirrBatch {
  std::vector<DMatrix> steps;  // one D x N matrix per timestep
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;  // L x N, 1 = real step
  DMatrix candidate;  // D x N
  Eigen::Index columns() const noexcept { return candidate.cols(); }
};

TirrBatch make_batch(std::span<const DirectedInput* const> inputs, int input_dim);

/// Activations kept for backward().
struct TirrCache {
  std::vector<DMatrix> h, s, gates, tanh_s;  // per step; h/s hold the state before the step
  DMatrix h_final, cand_pre, cand, concat, dense_pre, dense, dropout_mask, logits, probs;
  std::size_t first_step = 0;
};

/// Fixed affine map applied to inputs before the network: step vectors are divided
/// per dimension (no shift, so padding stays zero and signs survive), candidates are
/// standardized. Empty vectors mean identity.
struct InputScaling {
  DVector step_scale, candidate_mean, candidate_scale;
  bool identity() const noexcept { return step_scale.size() == 0; }
};

/// Per-dimension RMS of real history steps and mean/std of candidate embeddings over
/// both directions of `pairs`.
InputScaling fit_input_scaling(std::span<const PairInput> pairs, int input_dim);

/// The TIRR network parameters and batched forward/backward passes.
class TirrNet {
 public:
  explicit TirrNet(TirrSpec spec = {});

  const InputScaling& input_scaling() const noexcept { return scaling_; }
  void set_input_scaling(InputScaling scaling);
  /// make_batch() followed by the input scaling.
  TirrBatch batch(std::span<const DirectedInput* const> inputs) const;

  const TirrSpec& spec() const noexcept { return spec_; }
  void initialize(std::uint64_t seed);
  bool initialized() const noexcept { return initialized_; }
  void mark_initialized() noexcept { initialized_ = true; }

  /// Directed probabilities, 1 x N. In Train mode a dropout mask is drawn from `rng`
  /// unless `fixed_dropout` (dense_units x N, already scaled) is given.
  DMatrix forward(const TirrBatch& batch, nn::Mode mode, TirrCache* cache = nullptr,
                  std::mt19937_64* rng = nullptr, const DMatrix* fixed_dropout = nullptr) const;
  /// Accumulates gradients from dL/d(probability), 1 x N.
  void backward(const TirrBatch& batch, const TirrCache& cache, const DMatrix& grad_probs);

  LstmWeights lstm_weights() const;
  void zero_grad();
  std::vector<nn::Param<double>*> params();
  std::vector<const nn::Param<double>*> params() const;
  std::size_t param_count() const;

 private:
  nn::Param<double>& p(std::size_t i) { return params_[i]; }
  const nn::Param<double>& p(std::size_t i) const { return params_[i]; }

  TirrSpec spec_;
  std::vector<nn::Param<double>> params_;
  InputScaling scaling_;
  bool initialized_ = false;
};

/// Both Siamese models; the one for judge side s embeds images of side opposite(s).
struct SiamesePair {
  SiameseCheckpoint x_judge, y_judge;
  const SiameseCheckpoint& for_judge(Side s) const { return s == Side::X ? x_judge : y_judge; }
};

/// Precomputed embeddings of one photo per user, each made by the encoder of the side
/// that judges that user.
class EmbeddingTable {
 public:
  static EmbeddingTable build(const SiamesePair& models, std::span<const UserId> users,
                              const ImageProvider& images, std::uint32_t variant = 0);

  void set(const UserId& user, const Vec128& h) { table_[user] = h; }
  bool contains(const UserId& user) const { return table_.count(user) != 0; }
  /// Throws MissingImage for unknown users.
  const Vec128& at(const UserId& user) const;
  std::size_t size() const noexcept { return table_.size(); }

 private:
  std::map<UserId, Vec128> table_;
};

/// polarity * |enc(I_t) - enc(candidate)| for each history item, oldest first.
std::vector<Vec128> history_step_vectors(const PreferenceHistory& history,
                                         const Vec128& candidate_embedding,
                                         const EmbeddingTable& embeddings);
/// Same, encoding the photos on the fly with `siamese` in inference mode.
std::vector<Vec128> history_step_vectors(const PreferenceHistory& history,
                                         const ImageTensor& candidate_image,
                                         const SiameseCheckpoint& siamese,
                                         const ImageProvider& images, std::uint32_t variant = 0);

DirectedInput make_directed_input(const PreferenceHistory& history, const UserId& candidate,
                                  const EmbeddingTable& embeddings,
                                  std::size_t length = kHistoryCap);

/// Histories for both sides of `pair` at its reference time, each excluding the
/// counterpart, drawn from `context`.
PairInput make_pair_input(const LabeledPair& pair, const ValidatedEventLog& context,
                          const EmbeddingTable& embeddings, const HistoryOptions& options,
                          std::size_t length = kHistoryCap);

struct TirrTrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  std::uint64_t seed = 1;
  /// Share of the training pairs held out to pick the epoch with the best AUC; 0 keeps
  /// the last epoch.
  double validation_fraction = 0.1;
};

class TirrCheckpoint {
 public:
  static constexpr const char* kKind = "tirr";

  TirrCheckpoint() = default;
  TirrCheckpoint(TirrNet net, std::string siamese_x_digest, std::string siamese_y_digest)
      : net_(std::move(net)), sx_(std::move(siamese_x_digest)), sy_(std::move(siamese_y_digest)) {}

  const TirrNet& net() const noexcept { return net_; }
  TirrNet& net() noexcept { return net_; }
  const std::string& siamese_digest(Side judge) const { return judge == Side::X ? sx_ : sy_; }

  /// Throws UninitializedWeights before initialization or loading.
  double directed_score(const DirectedInput& input) const;
  /// 0.5 * (d(x, y) + d(y, x)), both directions evaluated in one canonical batch.
  double match_probability(const PairInput& pair) const;
  std::vector<double> match_probabilities(std::span<const PairInput> pairs) const;

  std::vector<double> loss_log;
  /// Held-out AUC after each epoch, and the 1-based epoch whose weights were kept
  /// (0 when no selection happened).
  std::vector<double> validation_auc;
  std::size_t selected_epoch = 0;
  TirrTrainConfig train_config;
  nlohmann::json provenance = nlohmann::json::object();

  Checkpoint to_checkpoint() const;
  /// Refuses a checkpoint trained against different Siamese models (ProvenanceError).
  static TirrCheckpoint from_checkpoint(const Checkpoint& ck, const SiamesePair& siamese);

 private:
  TirrNet net_;
  std::string sx_, sy_;
};

/// Mean BCE of match_probability against labels over a batch; with `accumulate`,
/// gradients are added to the network. Dropout masks come from `rng` in canonical
/// column order unless fixed masks are supplied.
double tirr_batch_loss(TirrNet& net, std::span<const PairInput> pairs, nn::Mode mode,
                       bool accumulate, std::mt19937_64* rng = nullptr,
                       const DMatrix* fixed_dropout = nullptr);

/// Minimizes BCE between match_probability and pair labels. The Siamese models are
/// only read. Throws Divergence on a non-finite loss.
TirrCheckpoint train_tirr(std::span<const PairInput> pairs, const SiamesePair& siamese,
                          const TirrTrainConfig& config, const TirrSpec& spec = {});

/// Ranks candidates for `x` by match probability, descending; ties by UserId.
class TirrRecommender {
 public:
  TirrRecommender(const TirrCheckpoint& model, const ValidatedEventLog& context,
                  const EmbeddingTable& embeddings, HistoryOptions options = {})
      : model_(&model), context_(&context), embeddings_(&embeddings), options_(options) {}

  double match_probability(const UserId& x, const UserId& y, Tick reference_time) const;
  /// Throws EmptyPool when the pool is empty, std::invalid_argument for k == 0.
  std::vector<std::pair<UserId, double>> recommend_top_k(const UserId& x,
                                                         std::span<const UserId> pool,
                                                         std::size_t k,
                                                         Tick reference_time) const;

 private:
  const TirrCheckpoint* model_;
  const ValidatedEventLog* context_;
  const EmbeddingTable* embeddings_;
  HistoryOptions options_;
};

}  // namespace reclab
