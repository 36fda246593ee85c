#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reclab/ids.hpp"

namespace reclab {

struct ScoredPair {
  UserId x, y;
  double score = 0.0;
  int label = 0;  // 1 match, 0 like-dislike
};

/// R = pairs with score >= t, RL = matches in R, RN = like-dislike pairs in R.
struct Confusion {
  std::size_t rl = 0, rn = 0, r = 0;
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

Confusion confusion_at_threshold(std::span<const ScoredPair> pairs, double t);

/// precision = RL / (RL + RN), recall = RL / R, F1 their harmonic mean; standard_recall =
/// RL / total_positives with its own F1. Zero denominators give 0.
struct Prf1 {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  double standard_recall = 0.0, standard_f1 = 0.0;
};

Prf1 prf1(const Confusion& counts, std::size_t total_positives);

struct RocPoint {
  double threshold = 0.0;  // +-infinity for the two sentinels
  double fpr = 0.0, tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // thresholds descending, so FPR and TPR ascend
  double auc = 0.0;
};

/// Sweeps every distinct score plus sentinels above and below; trapezoidal AUC.
/// Throws DegenerateLabels if only one class is present.
RocCurve roc_and_auc(std::span<const ScoredPair> pairs);

/// The candidate score maximizing F1 (against total positives) on `train_pairs`;
/// the lowest such threshold on ties. Throws DegenerateLabels.
double best_f1_threshold(std::span<const ScoredPair> train_pairs);

using Point2 = std::array<double, 2>;

class Projector {
 public:
  virtual ~Projector() = default;
  virtual std::string name() const = 0;
  virtual std::vector<Point2> project(std::span<const std::vector<double>> points) const = 0;
};

/// Projection onto the top two principal axes, each oriented so its largest-magnitude
/// loading is positive.
class PcaProjector final : public Projector {
 public:
  std::string name() const override { return "pca"; }
  std::vector<Point2> project(std::span<const std::vector<double>> points) const override;
};

struct ProjectedPoint {
  double x = 0.0, y = 0.0;
  int label = 0;
};

/// Throws std::invalid_argument with fewer than two points or mismatched labels.
std::vector<ProjectedPoint> project_embeddings(std::span<const std::vector<double>> embeddings,
                                               std::span<const int> labels,
                                               const Projector& projector);

/// Digest over the (x, y, label) set, ignoring scores and order.
std::string pair_set_digest(std::span<const ScoredPair> pairs);

struct EvalReport {
  std::string model;
  double threshold = 0.0;
  Confusion counts;
  std::size_t total_pairs = 0, total_positives = 0;
  Prf1 metrics;
  RocCurve roc;
  std::string eval_pair_digest;
  nlohmann::json provenance = nlohmann::json::object();
};

EvalReport make_report(std::string model, std::span<const ScoredPair> eval_pairs, double threshold);

nlohmann::json to_json(const EvalReport& r);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// "fpr,tpr" table.
std::string roc_csv(const RocCurve& roc);
/// "x,y,label" table.
std::string projection_csv(std::span<const ProjectedPoint> points);
/// Tab-separated model/AUC/F1 table sorted by AUC descending, then model name.
std::string comparison_table(std::span<const EvalReport> reports);

}  // namespace reclab
