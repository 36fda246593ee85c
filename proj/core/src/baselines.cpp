#include "reclab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "reclab/error.hpp"

namespace reclab {

double harmonic_reciprocal(double q_xy, double q_yx) {
  const double sum = q_xy + q_yx;
  if (sum <= 0.0) return 0.0;
  return 2.0 * q_xy * q_yx / sum;
}

// ---------------------------------------------------------------- RECON-lite

ReconLite ReconLite::fit(const ValidatedEventLog& train, const AttributeTable& attributes,
                         double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("Laplace alpha must be positive");
  ReconLite r;
  r.alpha_ = alpha;
  r.attributes_ = attributes;
  for (const auto& [id, attrs] : attributes) {
    r.attribute_count_ = std::max(r.attribute_count_, attrs.size());
    for (int v : attrs) {
      if (v < 0) throw std::invalid_argument("attribute values must be nonnegative");
      r.buckets_ = std::max(r.buckets_, v + 1);
    }
  }
  const std::size_t cells = r.attribute_count_ * static_cast<std::size_t>(r.buckets_);
  std::size_t positives = 0;
  for (const auto& e : train.events()) {
    if (polarity(e.kind) > 0) ++positives;
    const auto it = attributes.find(e.target);
    if (it == attributes.end()) continue;
    auto& prof = r.profiles_[e.actor];
    if (prof.seen.empty()) {
      prof.seen.assign(cells, 0);
      prof.liked.assign(cells, 0);
    }
    ++prof.expressions;
    for (std::size_t a = 0; a < it->second.size(); ++a) {
      const std::size_t cell = a * static_cast<std::size_t>(r.buckets_) + static_cast<std::size_t>(it->second[a]);
      ++prof.seen[cell];
      if (polarity(e.kind) > 0) ++prof.liked[cell];
    }
  }
  if (!train.empty()) r.global_rate_ = static_cast<double>(positives) / static_cast<double>(train.size());
  return r;
}

const AttributeProfile* ReconLite::profile(const UserId& u) const {
  const auto it = profiles_.find(u);
  return it == profiles_.end() ? nullptr : &it->second;
}

double ReconLite::directed(const UserId& x, const UserId& y) const {
  const auto* prof = profile(x);
  const auto attrs = attributes_.find(y);
  if (!prof || prof->expressions == 0 || attrs == attributes_.end() || attrs->second.empty()) {
    return global_rate_;
  }
  double sum = 0.0;
  for (std::size_t a = 0; a < attrs->second.size(); ++a) {
    const std::size_t cell = a * static_cast<std::size_t>(buckets_) + static_cast<std::size_t>(attrs->second[a]);
    sum += (prof->liked[cell] + alpha_) / (prof->seen[cell] + 2.0 * alpha_);
  }
  return sum / static_cast<double>(attrs->second.size());
}

double ReconLite::score(const UserId& x, const UserId& y) const {
  return harmonic_reciprocal(directed(x, y), directed(y, x));
}

Checkpoint ReconLite::to_checkpoint() const {
  Checkpoint ck(kKind);
  auto& meta = ck.metadata();
  meta["alpha"] = alpha_;
  meta["global_like_rate"] = global_rate_;
  meta["attribute_count"] = attribute_count_;
  meta["buckets"] = buckets_;
  meta["provenance"] = provenance;
  std::vector<std::string> attr_users;
  std::vector<double> attr_values;
  for (const auto& [id, attrs] : attributes_) {
    if (attrs.size() != attribute_count_) throw std::logic_error("ragged attribute table");
    attr_users.push_back(id.str());
    attr_values.insert(attr_values.end(), attrs.begin(), attrs.end());
  }
  meta["attribute_users"] = attr_users;
  ck.add("attributes", {static_cast<std::int64_t>(attr_users.size()), static_cast<std::int64_t>(attribute_count_)},
         std::span<const double>(attr_values));
  std::vector<std::string> prof_users;
  std::vector<double> liked, seen, expr;
  for (const auto& [id, p] : profiles_) {
    prof_users.push_back(id.str());
    liked.insert(liked.end(), p.liked.begin(), p.liked.end());
    seen.insert(seen.end(), p.seen.begin(), p.seen.end());
    expr.push_back(p.expressions);
  }
  meta["profile_users"] = prof_users;
  const auto cells = static_cast<std::int64_t>(attribute_count_ * static_cast<std::size_t>(buckets_));
  const auto n = static_cast<std::int64_t>(prof_users.size());
  ck.add("liked", {n, cells}, std::span<const double>(liked));
  ck.add("seen", {n, cells}, std::span<const double>(seen));
  ck.add("expressions", {n}, std::span<const double>(expr));
  return ck;
}

ReconLite ReconLite::from_checkpoint(const Checkpoint& ck) {
  ck.expect_kind(kKind);
  const auto& meta = ck.metadata();
  ReconLite r;
  r.alpha_ = meta.at("alpha").get<double>();
  r.global_rate_ = meta.at("global_like_rate").get<double>();
  r.attribute_count_ = meta.at("attribute_count").get<std::size_t>();
  r.buckets_ = meta.at("buckets").get<int>();
  r.provenance = meta.value("provenance", nlohmann::json::object());
  const auto attr_users = meta.at("attribute_users").get<std::vector<std::string>>();
  const auto& attrs = ck.tensor("attributes").values;
  if (attrs.size() != attr_users.size() * r.attribute_count_) throw FormatError("attribute table size mismatch");
  for (std::size_t i = 0; i < attr_users.size(); ++i) {
    std::vector<int> v(r.attribute_count_);
    for (std::size_t a = 0; a < r.attribute_count_; ++a) v[a] = static_cast<int>(attrs[i * r.attribute_count_ + a]);
    r.attributes_[UserId::parse(attr_users[i])] = std::move(v);
  }
  const auto prof_users = meta.at("profile_users").get<std::vector<std::string>>();
  const std::size_t cells = r.attribute_count_ * static_cast<std::size_t>(r.buckets_);
  const auto& liked = ck.tensor("liked").values;
  const auto& seen = ck.tensor("seen").values;
  const auto& expr = ck.tensor("expressions").values;
  if (liked.size() != prof_users.size() * cells || seen.size() != liked.size() ||
      expr.size() != prof_users.size()) {
    throw FormatError("profile table size mismatch");
  }
  for (std::size_t i = 0; i < prof_users.size(); ++i) {
    AttributeProfile p;
    for (std::size_t c = 0; c < cells; ++c) {
      p.liked.push_back(static_cast<std::uint32_t>(liked[i * cells + c]));
      p.seen.push_back(static_cast<std::uint32_t>(seen[i * cells + c]));
    }
    p.expressions = static_cast<std::uint32_t>(expr[i]);
    r.profiles_[UserId::parse(prof_users[i])] = std::move(p);
  }
  return r;
}

// ---------------------------------------------------------------- ImRec-lite

double ImRecLite::directed(const PreferenceHistory& judge_history, const UserId& candidate) const {
  const auto& head = siamese_->for_judge(judge_history.owner.side).net().head;
  const auto& cand = embeddings_->at(candidate);
  double sum = 0.0;
  std::size_t used = 0;
  for (auto it = judge_history.items.rbegin(); it != judge_history.items.rend() && used < max_anchors_; ++it) {
    if (it->polarity <= 0) continue;
    const auto& anchor = embeddings_->at(it->target);
    Vec128 diff;
    for (std::size_t i = 0; i < kEmbeddingDim; ++i) diff[i] = std::abs(anchor[i] - cand[i]);
    sum += head_probability(diff, head);
    ++used;
  }
  return used ? sum / static_cast<double>(used) : 0.5;
}

double ImRecLite::score(const PreferenceHistory& history_x, const UserId& x,
                        const PreferenceHistory& history_y, const UserId& y) const {
  if (history_x.owner != x || history_y.owner != y) throw std::invalid_argument("history owner mismatch");
  return harmonic_reciprocal(directed(history_x, y), directed(history_y, x));
}

Checkpoint ImRecLite::to_checkpoint() const {
  Checkpoint ck(kKind);
  ck.metadata()["max_anchors"] = max_anchors_;
  ck.metadata()["siamese_digests"] = {{"x", siamese_->x_judge.to_checkpoint().digest()},
                                      {"y", siamese_->y_judge.to_checkpoint().digest()}};
  return ck;
}

std::size_t ImRecLite::max_anchors_from_checkpoint(const Checkpoint& ck, const SiamesePair& siamese) {
  ck.expect_kind(kKind);
  const auto& d = ck.metadata().at("siamese_digests");
  if (d.at("x").get<std::string>() != siamese.x_judge.to_checkpoint().digest() ||
      d.at("y").get<std::string>() != siamese.y_judge.to_checkpoint().digest()) {
    throw ProvenanceError("ImRec-lite checkpoint refers to different Siamese models");
  }
  return ck.metadata().at("max_anchors").get<std::size_t>();
}

// ---------------------------------------------------------------- LFRR-lite

double DirectedFactors::probability(const UserId& actor, const UserId& target) const {
  double z = global_bias;
  const auto a = actor_index.find(actor);
  const auto t = target_index.find(target);
  if (a != actor_index.end()) z += actor_bias(static_cast<Eigen::Index>(a->second));
  if (t != target_index.end()) z += target_bias(static_cast<Eigen::Index>(t->second));
  if (a != actor_index.end() && t != target_index.end()) {
    z += actors.col(static_cast<Eigen::Index>(a->second)).dot(targets.col(static_cast<Eigen::Index>(t->second)));
  }
  return 1.0 / (1.0 + std::exp(-z));
}

namespace {

struct DirectedExample {
  std::size_t actor, target;
  int label;
};

double bce(double p, int y) {
  const double q = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return y ? -std::log(q) : -std::log(1.0 - q);
}

void init_direction(DirectedFactors& f, const ValidatedEventLog& train, Side actor_side,
                    const LfrrConfig& cfg, std::mt19937_64& rng, std::vector<DirectedExample>& out) {
  for (const auto& e : train.events()) {
    if (e.actor.side != actor_side) continue;
    f.actor_index.emplace(e.actor, 0);
    f.target_index.emplace(e.target, 0);
  }
  std::size_t i = 0;
  for (auto& [id, idx] : f.actor_index) idx = i++;
  i = 0;
  for (auto& [id, idx] : f.target_index) idx = i++;
  const auto d = static_cast<Eigen::Index>(cfg.dimension);
  std::normal_distribution<double> normal(0.0, cfg.init_scale);
  f.actors.resize(d, static_cast<Eigen::Index>(f.actor_index.size()));
  f.targets.resize(d, static_cast<Eigen::Index>(f.target_index.size()));
  for (Eigen::Index k = 0; k < f.actors.size(); ++k) f.actors.data()[k] = normal(rng);
  for (Eigen::Index k = 0; k < f.targets.size(); ++k) f.targets.data()[k] = normal(rng);
  f.actor_bias = DVector::Zero(f.actors.cols());
  f.target_bias = DVector::Zero(f.targets.cols());
  f.global_bias = 0.0;
  for (const auto& e : train.events()) {
    if (e.actor.side != actor_side) continue;
    out.push_back({f.actor_index.at(e.actor), f.target_index.at(e.target), polarity(e.kind) > 0 ? 1 : 0});
  }
}

double sgd_epoch(DirectedFactors& f, std::vector<DirectedExample>& examples, const LfrrConfig& cfg,
                 std::mt19937_64& rng) {
  std::shuffle(examples.begin(), examples.end(), rng);
  double total = 0.0;
  const double lr = cfg.learning_rate, reg = cfg.regularization;
  DVector u_old;
  for (const auto& ex : examples) {
    const auto a = static_cast<Eigen::Index>(ex.actor), t = static_cast<Eigen::Index>(ex.target);
    auto u = f.actors.col(a);
    auto v = f.targets.col(t);
    const double z = u.dot(v) + f.actor_bias(a) + f.target_bias(t) + f.global_bias;
    const double p = 1.0 / (1.0 + std::exp(-z));
    total += bce(p, ex.label);
    const double err = p - ex.label;
    u_old = u;
    u -= lr * (err * v + reg * u);
    v -= lr * (err * u_old + reg * v);
    f.actor_bias(a) -= lr * err;
    f.target_bias(t) -= lr * err;
    f.global_bias -= lr * err;
  }
  return total;
}

}  // namespace

LatentFactors lfrr_lite_train(const ValidatedEventLog& train, const LfrrConfig& config) {
  if (config.dimension <= 0) throw std::invalid_argument("latent dimension must be positive");
  LatentFactors out;
  out.config = config;
  std::mt19937_64 rng(config.seed);
  std::vector<DirectedExample> ex_xy, ex_yx;
  init_direction(out.x_to_y, train, Side::X, config, rng, ex_xy);
  init_direction(out.y_to_x, train, Side::Y, config, rng, ex_yx);
  const double n = static_cast<double>(ex_xy.size() + ex_yx.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double loss = (sgd_epoch(out.x_to_y, ex_xy, config, rng) + sgd_epoch(out.y_to_x, ex_yx, config, rng)) /
                        std::max(1.0, n);
    if (!std::isfinite(loss)) throw Divergence("LFRR-lite loss became non-finite in epoch " + std::to_string(epoch));
    out.loss_log.push_back(loss);
  }
  return out;
}

double lfrr_lite_score(const UserId& x, const UserId& y, const LatentFactors& factors) {
  return harmonic_reciprocal(factors.direction(x.side).probability(x, y),
                             factors.direction(y.side).probability(y, x));
}

namespace {

void save_direction(Checkpoint& ck, const std::string& prefix, const DirectedFactors& f) {
  std::vector<std::string> actors(f.actor_index.size()), targets(f.target_index.size());
  for (const auto& [id, i] : f.actor_index) actors[i] = id.str();
  for (const auto& [id, i] : f.target_index) targets[i] = id.str();
  ck.metadata()[prefix] = {{"actors", actors}, {"targets", targets}, {"global_bias", f.global_bias}};
  auto add = [&](const std::string& name, const DMatrix& m) {
    ck.add(prefix + "." + name, {m.rows(), m.cols()},
           std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
  };
  add("actors", f.actors);
  add("targets", f.targets);
  add("actor_bias", f.actor_bias);
  add("target_bias", f.target_bias);
}

DirectedFactors load_direction(const Checkpoint& ck, const std::string& prefix, int d) {
  DirectedFactors f;
  const auto& meta = ck.metadata().at(prefix);
  const auto actors = meta.at("actors").get<std::vector<std::string>>();
  const auto targets = meta.at("targets").get<std::vector<std::string>>();
  for (std::size_t i = 0; i < actors.size(); ++i) f.actor_index[UserId::parse(actors[i])] = i;
  for (std::size_t i = 0; i < targets.size(); ++i) f.target_index[UserId::parse(targets[i])] = i;
  f.global_bias = meta.at("global_bias").get<double>();
  auto load = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    const auto& t = ck.tensor(prefix + "." + name);
    if (t.numel() != static_cast<std::size_t>(rows * cols)) throw FormatError("tensor '" + t.name + "' has the wrong size");
    return DMatrix(Eigen::Map<const DMatrix>(t.values.data(), rows, cols));
  };
  const auto na = static_cast<Eigen::Index>(actors.size()), nt = static_cast<Eigen::Index>(targets.size());
  f.actors = load("actors", d, na);
  f.targets = load("targets", d, nt);
  f.actor_bias = load("actor_bias", na, 1);
  f.target_bias = load("target_bias", nt, 1);
  return f;
}

}  // namespace

Checkpoint LatentFactors::to_checkpoint() const {
  Checkpoint ck(kKind);
  auto& meta = ck.metadata();
  meta["config"] = {{"dimension", config.dimension},       {"epochs", config.epochs},
                    {"learning_rate", config.learning_rate}, {"regularization", config.regularization},
                    {"init_scale", config.init_scale},       {"seed", config.seed}};
  meta["loss_log"] = loss_log;
  meta["provenance"] = provenance;
  save_direction(ck, "x_to_y", x_to_y);
  save_direction(ck, "y_to_x", y_to_x);
  return ck;
}

LatentFactors LatentFactors::from_checkpoint(const Checkpoint& ck) {
  ck.expect_kind(kKind);
  const auto& meta = ck.metadata();
  LatentFactors f;
  const auto& c = meta.at("config");
  f.config.dimension = c.at("dimension").get<int>();
  f.config.epochs = c.at("epochs").get<std::size_t>();
  f.config.learning_rate = c.at("learning_rate").get<double>();
  f.config.regularization = c.at("regularization").get<double>();
  f.config.init_scale = c.at("init_scale").get<double>();
  f.config.seed = c.at("seed").get<std::uint64_t>();
  f.loss_log = meta.at("loss_log").get<std::vector<double>>();
  f.provenance = meta.value("provenance", nlohmann::json::object());
  f.x_to_y = load_direction(ck, "x_to_y", f.config.dimension);
  f.y_to_x = load_direction(ck, "y_to_x", f.config.dimension);
  return f;
}

}  // namespace reclab
