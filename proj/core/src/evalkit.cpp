#include "reclab/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "reclab/digest.hpp"
#include "reclab/error.hpp"

namespace reclab {

Confusion confusion_at_threshold(std::span<const ScoredPair> pairs, double t) {
  Confusion c;
  for (const auto& p : pairs) {
    if (p.score < t) continue;
    ++c.r;
    (p.label ? c.rl : c.rn) += 1;
  }
  return c;
}

namespace {
double ratio(std::size_t num, std::size_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0;
}
double harmonic(double a, double b) { return a + b > 0.0 ? 2.0 * a * b / (a + b) : 0.0; }
}  // namespace

Prf1 prf1(const Confusion& counts, std::size_t total_positives) {
  Prf1 m;
  m.precision = ratio(counts.rl, counts.rl + counts.rn);
  m.recall = ratio(counts.rl, counts.r);
  m.f1 = harmonic(m.precision, m.recall);
  m.standard_recall = ratio(counts.rl, total_positives);
  m.standard_f1 = harmonic(m.precision, m.standard_recall);
  return m;
}

namespace {

struct Sweep {
  double threshold;
  std::size_t tp, fp;
};

// Cumulative counts at each distinct score, descending.
std::vector<Sweep> sweep(std::span<const ScoredPair> pairs, std::size_t& positives, std::size_t& negatives) {
  std::vector<std::pair<double, int>> s;
  s.reserve(pairs.size());
  positives = negatives = 0;
  for (const auto& p : pairs) {
    if (!std::isfinite(p.score)) throw std::invalid_argument("non-finite score");
    s.emplace_back(p.score, p.label);
    (p.label ? positives : negatives) += 1;
  }
  if (positives == 0 || negatives == 0) throw DegenerateLabels("both labels are required");
  std::sort(s.begin(), s.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<Sweep> out;
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < s.size();) {
    const double t = s[i].first;
    for (; i < s.size() && s[i].first == t; ++i) (s[i].second ? tp : fp) += 1;
    out.push_back({t, tp, fp});
  }
  return out;
}

}  // namespace

RocCurve roc_and_auc(std::span<const ScoredPair> pairs) {
  std::size_t pos = 0, neg = 0;
  const auto steps = sweep(pairs, pos, neg);
  RocCurve roc;
  const double inf = std::numeric_limits<double>::infinity();
  roc.points.push_back({inf, 0.0, 0.0});
  long double area = 0.0L;
  std::size_t prev_tp = 0, prev_fp = 0;
  for (const auto& s : steps) {
    roc.points.push_back({s.threshold, ratio(s.fp, neg), ratio(s.tp, pos)});
    area += static_cast<long double>(s.fp - prev_fp) * static_cast<long double>(s.tp + prev_tp);
    prev_tp = s.tp;
    prev_fp = s.fp;
  }
  roc.points.push_back({-inf, 1.0, 1.0});
  roc.auc = static_cast<double>(area / (2.0L * static_cast<long double>(pos) * static_cast<long double>(neg)));
  return roc;
}

double best_f1_threshold(std::span<const ScoredPair> train_pairs) {
  std::size_t pos = 0, neg = 0;
  const auto steps = sweep(train_pairs, pos, neg);
  double best = -1.0, threshold = steps.front().threshold;
  for (const auto& s : steps) {
    const Confusion c{s.tp, s.fp, s.tp + s.fp};
    const double f1 = prf1(c, pos).standard_f1;
    // Later steps have lower thresholds, so >= keeps the lowest among ties.
    if (f1 >= best) {
      best = f1;
      threshold = s.threshold;
    }
  }
  return threshold;
}

std::vector<Point2> PcaProjector::project(std::span<const std::vector<double>> points) const {
  if (points.empty()) return {};
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto d = static_cast<Eigen::Index>(points.front().size());
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(points[static_cast<std::size_t>(i)].size()) != d) {
      throw std::invalid_argument("points differ in dimension");
    }
    for (Eigen::Index k = 0; k < d; ++k) m(i, k) = points[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  }
  const Eigen::RowVectorXd mean = m.colwise().mean();
  m.rowwise() -= mean;
  const Eigen::MatrixXd cov = m.transpose() * m / static_cast<double>(std::max<Eigen::Index>(1, n - 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  Eigen::MatrixXd axes(d, 2);
  for (int a = 0; a < 2; ++a) {
    const Eigen::Index col = d - 1 - a;
    Eigen::VectorXd v = col >= 0 ? Eigen::VectorXd(eig.eigenvectors().col(col)) : Eigen::VectorXd::Zero(d);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(a) = v;
  }
  const Eigen::MatrixXd proj = m * axes;
  std::vector<Point2> out(points.size());
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = {proj(i, 0), proj(i, 1)};
  return out;
}

std::vector<ProjectedPoint> project_embeddings(std::span<const std::vector<double>> embeddings,
                                               std::span<const int> labels,
                                               const Projector& projector) {
  if (embeddings.size() < 2) throw std::invalid_argument("projection needs at least two embeddings");
  if (labels.size() != embeddings.size()) throw std::invalid_argument("one label per embedding");
  const auto pts = projector.project(embeddings);
  if (pts.size() != embeddings.size()) throw std::logic_error("projector changed the row count");
  std::vector<ProjectedPoint> out;
  out.reserve(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) out.push_back({pts[i][0], pts[i][1], labels[i]});
  return out;
}

std::string pair_set_digest(std::span<const ScoredPair> pairs) {
  std::vector<std::string> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back(p.x.str() + "\t" + p.y.str() + "\t" + std::to_string(p.label));
  std::sort(rows.begin(), rows.end());
  std::string all;
  for (const auto& r : rows) all += r + "\n";
  return sha256_hex(all);
}

EvalReport make_report(std::string model, std::span<const ScoredPair> eval_pairs, double threshold) {
  EvalReport r;
  r.model = std::move(model);
  r.threshold = threshold;
  r.counts = confusion_at_threshold(eval_pairs, threshold);
  r.total_pairs = eval_pairs.size();
  for (const auto& p : eval_pairs) r.total_positives += p.label ? 1 : 0;
  r.metrics = prf1(r.counts, r.total_positives);
  r.roc = roc_and_auc(eval_pairs);
  r.eval_pair_digest = pair_set_digest(eval_pairs);
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json roc = nlohmann::json::array();
  for (const auto& p : r.roc.points) roc.push_back({p.fpr, p.tpr});
  return {{"model", r.model},
          {"threshold", r.threshold},
          {"counts", {{"RL", r.counts.rl}, {"RN", r.counts.rn}, {"R", r.counts.r}}},
          {"total_pairs", r.total_pairs},
          {"total_positives", r.total_positives},
          {"precision", r.metrics.precision},
          {"recall", r.metrics.recall},
          {"f1", r.metrics.f1},
          {"standard_recall", r.metrics.standard_recall},
          {"standard_f1", r.metrics.standard_f1},
          {"auc", r.roc.auc},
          {"roc", roc},
          {"eval_pair_digest", r.eval_pair_digest},
          {"note", "recall and f1 follow RL/|R| literally, which equals precision whenever "
                   "every recommended pair is labeled; standard_recall uses RL/total_positives"},
          {"provenance", r.provenance}};
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.threshold = j.at("threshold").get<double>();
  r.counts.rl = j.at("counts").at("RL").get<std::size_t>();
  r.counts.rn = j.at("counts").at("RN").get<std::size_t>();
  r.counts.r = j.at("counts").at("R").get<std::size_t>();
  r.total_pairs = j.at("total_pairs").get<std::size_t>();
  r.total_positives = j.at("total_positives").get<std::size_t>();
  r.metrics.precision = j.at("precision").get<double>();
  r.metrics.recall = j.at("recall").get<double>();
  r.metrics.f1 = j.at("f1").get<double>();
  r.metrics.standard_recall = j.at("standard_recall").get<double>();
  r.metrics.standard_f1 = j.at("standard_f1").get<double>();
  r.roc.auc = j.at("auc").get<double>();
  for (const auto& p : j.at("roc")) r.roc.points.push_back({0.0, p.at(0).get<double>(), p.at(1).get<double>()});
  r.eval_pair_digest = j.at("eval_pair_digest").get<std::string>();
  r.provenance = j.value("provenance", nlohmann::json::object());
  return r;
}

namespace {
std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}
}  // namespace

std::string roc_csv(const RocCurve& roc) {
  std::string out = "fpr,tpr\n";
  for (const auto& p : roc.points) out += fmt(p.fpr) + "," + fmt(p.tpr) + "\n";
  return out;
}

std::string projection_csv(std::span<const ProjectedPoint> points) {
  std::string out = "x,y,label\n";
  for (const auto& p : points) out += fmt(p.x) + "," + fmt(p.y) + "," + std::to_string(p.label) + "\n";
  return out;
}

std::string comparison_table(std::span<const EvalReport> reports) {
  std::vector<const EvalReport*> sorted;
  for (const auto& r : reports) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    if (a->roc.auc != b->roc.auc) return a->roc.auc > b->roc.auc;
    return a->model < b->model;
  });
  std::string out = "model\tauc\tprecision\trecall\tf1\tstandard_recall\tstandard_f1\tthreshold\n";
  for (const auto* r : sorted) {
    out += r->model + "\t" + fmt(r->roc.auc) + "\t" + fmt(r->metrics.precision) + "\t" +
           fmt(r->metrics.recall) + "\t" + fmt(r->metrics.f1) + "\t" + fmt(r->metrics.standard_recall) +
           "\t" + fmt(r->metrics.standard_f1) + "\t" + fmt(r->threshold) + "\n";
  }
  return out;
}

}  // namespace reclab
