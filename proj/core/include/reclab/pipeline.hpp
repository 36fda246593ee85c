#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "reclab/baselines.hpp"
#include "reclab/config.hpp"
#include "reclab/evalkit.hpp"
#include "reclab/pairs.hpp"
#include "reclab/siamese.hpp"
#include "reclab/split.hpp"
#include "reclab/synth.hpp"
#include "reclab/tirr.hpp"

namespace reclab {

// ---------------------------------------------------------------- in-memory stages

struct PreparedData {
  SyntheticWorld world;
  ValidatedEventLog log;
  DatasetBundle splits;
  /// Siamese and match splits together: the history context seen in training.
  ValidatedEventLog train_context;
};

PreparedData prepare_data(const RunConfig& config);
ValidatedEventLog merge_logs(const ValidatedEventLog& a, const ValidatedEventLog& b);

struct SiameseStage {
  SiamesePair models;
  double heldout_accuracy_x = 0.0, heldout_accuracy_y = 0.0;
  std::vector<std::string> warnings;
};

/// Trains one model per judging side on triplets drawn from `train`; held-out accuracy
/// is measured on triplets from `heldout` when it has eligible judges.
SiameseStage run_siamese_stage(const ValidatedEventLog& train, const ValidatedEventLog& heldout,
                               const ImageProvider& images, const RunConfig& config);

/// Every user of the world, sorted.
std::vector<UserId> all_users(const SyntheticWorld& world);
AttributeTable attribute_table(const SyntheticWorld& world);

std::vector<PairInput> make_pair_inputs(std::span<const LabeledPair> pairs, const ValidatedEventLog& context,
                                        const EmbeddingTable& embeddings, const RunConfig& config);

struct FittedModels {
  const SiamesePair* siamese = nullptr;
  const EmbeddingTable* embeddings = nullptr;
  const TirrCheckpoint* tirr = nullptr;
  const ReconLite* recon = nullptr;
  const LatentFactors* lfrr = nullptr;
};

/// Scores labeled pairs with one model. Histories come from `context` at each pair's
/// reference time.
std::vector<ScoredPair> score_pairs(const std::string& model, std::span<const LabeledPair> pairs,
                                    const ValidatedEventLog& context, const FittedModels& fitted,
                                    const RunConfig& config);

/// Threshold picked on `train_pairs` scores, applied to `eval_pairs`.
EvalReport evaluate_model(const std::string& model, std::span<const LabeledPair> train_pairs,
                          const ValidatedEventLog& train_context, std::span<const LabeledPair> eval_pairs,
                          const ValidatedEventLog& eval_context, const FittedModels& fitted,
                          const RunConfig& config);

/// Difference vectors |h_anchor - h_other| of held-out triplets, labeled 1 for the
/// liked and 0 for the disliked member.
void projection_inputs(const ValidatedEventLog& log, const SiamesePair& siamese, const ImageProvider& images,
                       std::size_t max_rows, std::uint64_t seed, std::vector<std::vector<double>>& vectors,
                       std::vector<int>& labels);

// ---------------------------------------------------------------- artifact layout

struct RunLayout {
  explicit RunLayout(std::string root) : root(std::move(root)) {}
  std::string root;

  std::string data() const { return root + "/data"; }
  std::string manifest() const { return data() + "/world.json"; }
  std::string events() const { return data() + "/events.log"; }
  std::string split(const std::string& name) const { return data() + "/splits/" + name + ".log"; }
  std::string split_index() const { return data() + "/splits.json"; }
  std::string images() const { return data() + "/images"; }
  std::string model(const std::string& name) const { return root + "/models/" + name + ".ck"; }
  std::string log(const std::string& name) const { return root + "/logs/" + name + ".tsv"; }
  std::string report(const std::string& name) const { return root + "/reports/" + name; }
};

void cmd_generate(const RunConfig& config);
/// stage: "siamese", "tirr" or "baselines".
void cmd_train(const RunConfig& config, const std::string& stage);
/// Writes one report per model plus the comparison table. Throws SplitContamination
/// when split digests or disjointness checks fail.
std::vector<EvalReport> cmd_evaluate(const RunConfig& config);
void cmd_project(const RunConfig& config);
/// Collects reports and training logs into reports/summary.json; returns the
/// comparison table.
std::string cmd_report(const RunConfig& config);

}  // namespace reclab
