#include "reclab/siamese.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

#include "reclab/error.hpp"

namespace reclab {

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

const char* loss_kind_name(LossKind k) { return k == LossKind::BCE ? "bce" : "contrastive"; }

LossKind loss_kind_from(const std::string& s) {
  if (s == "bce") return LossKind::BCE;
  if (s == "contrastive") return LossKind::Contrastive;
  throw FormatError("unknown loss kind '" + s + "'");
}

template <class T>
void copy_tensor(const ImageTensor& image, T* column) {
  std::copy(image.values.begin(), image.values.end(), column);
}

}  // namespace

Vec128 distance(const Embedding128& a, const Embedding128& b) {
  Vec128 d;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) d[i] = std::abs(a.h[i] - b.h[i]);
  return d;
}

double PreferenceHead::logit(std::span<const double> diff) const {
  if (diff.size() != weights.size()) throw std::invalid_argument("head input dimension mismatch");
  double z = bias;
  for (std::size_t i = 0; i < diff.size(); ++i) z += weights[i] * diff[i];
  return z;
}

double PreferenceHead::probability(std::span<const double> diff) const {
  return sigmoid(logit(diff));
}

double head_probability(const Vec128& diff, const PreferenceHead& head) {
  return head.probability(diff);
}

double bce_loss(double p, int label) {
  const double q = std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon);
  return label ? -std::log(q) : -std::log(1.0 - q);
}

double bce_loss_grad(double p, int label) {
  if (p < kBceEpsilon || p > 1.0 - kBceEpsilon) return 0.0;
  return label ? -1.0 / p : 1.0 / (1.0 - p);
}

namespace {
bool pays_distance(int label, ContrastiveConvention c) {
  return c == ContrastiveConvention::LikeIsSimilar ? label == 1 : label == 0;
}
}  // namespace

double contrastive_loss(double d, int label, double margin, ContrastiveConvention convention) {
  if (!(margin > 0.0)) throw std::invalid_argument("contrastive margin must be positive");
  if (pays_distance(label, convention)) return 0.5 * d * d;
  const double gap = std::max(0.0, margin - d);
  return 0.5 * gap * gap;
}

double contrastive_loss_grad(double d, int label, double margin, ContrastiveConvention convention) {
  if (pays_distance(label, convention)) return d;
  return -std::max(0.0, margin - d);
}

// ---------------------------------------------------------------- triplets

TripletSample sample_triplets(const ValidatedEventLog& log, std::size_t n, std::uint64_t seed,
                              std::optional<Side> judge_side, std::uint32_t variants_per_user) {
  struct Judge {
    UserId id;
    std::vector<UserId> pos, neg;
    std::uint64_t count = 0;
  };
  std::map<UserId, Judge> by_id;
  for (const auto& e : log.events()) {
    if (judge_side && e.actor.side != *judge_side) continue;
    auto& j = by_id[e.actor];
    j.id = e.actor;
    (polarity(e.kind) > 0 ? j.pos : j.neg).push_back(e.target);
  }
  std::vector<Judge> judges;
  std::vector<std::uint64_t> prefix{0};
  for (auto& [id, j] : by_id) {
    if (j.pos.size() < 2 || j.neg.empty()) continue;
    j.count = j.pos.size() * (j.pos.size() - 1) * j.neg.size();
    prefix.push_back(prefix.back() + j.count);
    judges.push_back(std::move(j));
  }
  const std::uint64_t total = prefix.back();
  if (total == 0) throw InsufficientJudges("no judge with >= 2 likes and >= 1 dislike");

  TripletSample out;
  out.unique_available = total;
  std::mt19937_64 rng(seed);
  std::vector<std::uint64_t> picks;
  picks.reserve(n);
  if (n > total) {
    out.warning = "requested " + std::to_string(n) + " triplets but only " +
                  std::to_string(total) + " are distinct; sampling with replacement";
    std::uniform_int_distribution<std::uint64_t> any(0, total - 1);
    for (std::size_t i = 0; i < n; ++i) picks.push_back(any(rng));
  } else if (n > total / 2) {
    picks.resize(total);
    std::iota(picks.begin(), picks.end(), std::uint64_t{0});
    std::shuffle(picks.begin(), picks.end(), rng);
    picks.resize(n);
  } else {
    std::uniform_int_distribution<std::uint64_t> any(0, total - 1);
    std::unordered_set<std::uint64_t> seen;
    while (picks.size() < n) {
      const auto v = any(rng);
      if (seen.insert(v).second) picks.push_back(v);
    }
  }

  std::uniform_int_distribution<std::uint32_t> variant(0, std::max(1u, variants_per_user) - 1);
  out.triplets.reserve(n);
  for (auto idx : picks) {
    const auto k = static_cast<std::size_t>(
        std::upper_bound(prefix.begin(), prefix.end(), idx) - prefix.begin() - 1);
    const auto& j = judges[k];
    std::uint64_t local = idx - prefix[k];
    const std::size_t neg = local % j.neg.size();
    local /= j.neg.size();
    const std::size_t others = j.pos.size() - 1;
    const std::size_t anchor = local / others;
    std::size_t positive = local % others;
    if (positive >= anchor) ++positive;
    Triplet t;
    t.judge = j.id;
    t.anchor = {j.pos[anchor], variant(rng)};
    t.positive = {j.pos[positive], variant(rng)};
    t.negative = {j.neg[neg], variant(rng)};
    out.triplets.push_back(t);
  }
  return out;
}

// ---------------------------------------------------------------- loss

template <class T>
double siamese_batch_loss(SiameseNet<T>& net, const nn::Matrix<T>& images, const LossConfig& loss,
                          HeadGrad* head_grad, nn::ForwardTrace<T>* trace) {
  if (images.cols() == 0 || images.cols() % 3 != 0) {
    throw std::invalid_argument("siamese batch must hold whole triplets");
  }
  nn::ForwardTrace<T> local;
  if (!trace) trace = &local;
  const nn::Matrix<T> h = net.encoder.forward(images, nn::Mode::Train, trace);
  const auto dim = static_cast<std::size_t>(h.rows());
  const auto batch = static_cast<std::size_t>(h.cols() / 3);
  const double pairs = 2.0 * static_cast<double>(batch);
  const auto& head = net.head;

  nn::Matrix<T> dh;
  if (head_grad) {
    dh = nn::Matrix<T>::Zero(h.rows(), h.cols());
    head_grad->weights.assign(dim, 0.0);
    head_grad->bias = 0.0;
  }

  double total = 0.0;
  std::vector<double> diff(dim), delta(dim);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto a = static_cast<Eigen::Index>(3 * b);
    for (int which = 1; which <= 2; ++which) {
      const Eigen::Index o = a + which;
      const int label = which == 1 ? 1 : 0;
      for (std::size_t i = 0; i < dim; ++i) {
        delta[i] = static_cast<double>(h(static_cast<Eigen::Index>(i), a)) -
                   static_cast<double>(h(static_cast<Eigen::Index>(i), o));
        diff[i] = std::abs(delta[i]);
      }
      const double p = sigmoid(head.logit(diff));
      if (loss.kind == LossKind::BCE || head_grad) {
        const double dz = bce_loss_grad(p, label) * p * (1.0 - p) / pairs;
        if (loss.kind == LossKind::BCE) total += bce_loss(p, label);
        if (head_grad) {
          for (std::size_t i = 0; i < dim; ++i) head_grad->weights[i] += dz * diff[i];
          head_grad->bias += dz;
          if (loss.kind == LossKind::BCE) {
            for (std::size_t i = 0; i < dim; ++i) {
              const double s = delta[i] > 0 ? 1.0 : delta[i] < 0 ? -1.0 : 0.0;
              const auto g = static_cast<T>(dz * head.weights[i] * s);
              dh(static_cast<Eigen::Index>(i), a) += g;
              dh(static_cast<Eigen::Index>(i), o) -= g;
            }
          }
        }
      }
      if (loss.kind == LossKind::Contrastive) {
        double dist = 0.0;
        for (double v : delta) dist += v * v;
        dist = std::sqrt(dist);
        total += contrastive_loss(dist, label, loss.margin, loss.convention);
        if (head_grad && dist > 0.0) {
          const double dd = contrastive_loss_grad(dist, label, loss.margin, loss.convention) / pairs;
          for (std::size_t i = 0; i < dim; ++i) {
            const auto g = static_cast<T>(dd * delta[i] / dist);
            dh(static_cast<Eigen::Index>(i), a) += g;
            dh(static_cast<Eigen::Index>(i), o) -= g;
          }
        }
      }
    }
  }
  if (head_grad) net.encoder.backward(*trace, dh);
  return total / pairs;
}

template double siamese_batch_loss<float>(SiameseNet<float>&, const nn::Matrix<float>&,
                                          const LossConfig&, HeadGrad*, nn::ForwardTrace<float>*);
template double siamese_batch_loss<double>(SiameseNet<double>&, const nn::Matrix<double>&,
                                           const LossConfig&, HeadGrad*, nn::ForwardTrace<double>*);

// ---------------------------------------------------------------- checkpoint

SiameseCheckpoint::SiameseCheckpoint() : net_(nn::EncoderSpec::face_encoder()) {}

SiameseCheckpoint::SiameseCheckpoint(nn::EncoderSpec spec, Side judge_side, std::uint64_t init_seed)
    : net_(std::move(spec)), judge_side_(judge_side), init_seed_(init_seed) {
  net_.encoder.initialize(init_seed);
  std::mt19937_64 rng(init_seed ^ 0x5eed5eedULL);
  const double limit = std::sqrt(3.0 / static_cast<double>(net_.head.weights.size()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& w : net_.head.weights) w = dist(rng);
}

std::vector<Embedding128> SiameseCheckpoint::encode_batch(std::span<const ImageTensor> images) const {
  if (net_.encoder.spec().output_dim() != static_cast<int>(kEmbeddingDim)) {
    throw std::logic_error("encode_batch requires a 128-dimensional encoder");
  }
  std::vector<Embedding128> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 64;
  nn::Matrix<float> batch;
  for (std::size_t s = 0; s < images.size(); s += kChunk) {
    const std::size_t m = std::min(kChunk, images.size() - s);
    batch.resize(static_cast<Eigen::Index>(kImageValues), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < m; ++i) {
      copy_tensor(images[s + i], batch.col(static_cast<Eigen::Index>(i)).data());
    }
    const auto h = net_.encoder.forward(batch, nn::Mode::Infer);
    for (std::size_t i = 0; i < m; ++i) {
      Embedding128 e;
      for (std::size_t k = 0; k < kEmbeddingDim; ++k) {
        e.h[k] = h(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
      }
      out.push_back(e);
    }
  }
  return out;
}

Embedding128 SiameseCheckpoint::encode(const ImageTensor& image) const {
  return encode_batch(std::span<const ImageTensor>(&image, 1)).front();
}

double SiameseCheckpoint::pair_probability(const ImageTensor& anchor,
                                           const ImageTensor& candidate) const {
  const std::array<ImageTensor, 2> both{anchor, candidate};
  const auto h = encode_batch(both);
  return head_probability(distance(h[0], h[1]), net_.head);
}

Checkpoint SiameseCheckpoint::to_checkpoint() const {
  Checkpoint ck(kKind);
  auto& meta = ck.metadata();
  meta["encoder"] = nn::to_json(net_.encoder.spec());
  meta["judge_side"] = std::string(1, side_char(judge_side_));
  meta["init_seed"] = init_seed_;
  meta["loss"] = {{"kind", loss_kind_name(train_config.loss.kind)},
                  {"margin", train_config.loss.margin},
                  {"learning_rate", train_config.loss.learning_rate},
                  {"convention", train_config.loss.convention == ContrastiveConvention::LikeIsSimilar
                                     ? "like_is_similar"
                                     : "like_is_label_one"}};
  meta["epochs"] = train_config.epochs;
  meta["batch_size"] = train_config.batch_size;
  meta["train_seed"] = train_config.seed;
  meta["loss_log"] = loss_log;
  meta["provenance"] = provenance;
  for (const auto* p : net_.encoder.params()) {
    ck.add(p->name, {p->value.rows(), p->value.cols()},
           std::span<const float>(p->value.data(), static_cast<std::size_t>(p->value.size())));
  }
  ck.add("head.weights", {static_cast<std::int64_t>(net_.head.weights.size())},
         std::span<const double>(net_.head.weights));
  ck.add("head.bias", {1}, std::span<const double>(&net_.head.bias, 1));
  return ck;
}

SiameseCheckpoint SiameseCheckpoint::from_checkpoint(const Checkpoint& ck) {
  ck.expect_kind(kKind);
  const auto& meta = ck.metadata();
  SiameseCheckpoint out;
  out.net_ = SiameseNet<float>(nn::encoder_spec_from_json(meta.at("encoder")));
  out.judge_side_ = meta.at("judge_side").get<std::string>() == "x" ? Side::X : Side::Y;
  out.init_seed_ = meta.at("init_seed").get<std::uint64_t>();
  const auto& loss = meta.at("loss");
  out.train_config.loss.kind = loss_kind_from(loss.at("kind").get<std::string>());
  out.train_config.loss.margin = loss.at("margin").get<double>();
  out.train_config.loss.learning_rate = loss.at("learning_rate").get<double>();
  out.train_config.loss.convention = loss.at("convention").get<std::string>() == "like_is_similar"
                                         ? ContrastiveConvention::LikeIsSimilar
                                         : ContrastiveConvention::LikeIsLabelOne;
  out.train_config.epochs = meta.at("epochs").get<std::size_t>();
  out.train_config.batch_size = meta.at("batch_size").get<std::size_t>();
  out.train_config.seed = meta.at("train_seed").get<std::uint64_t>();
  out.loss_log = meta.at("loss_log").get<std::vector<double>>();
  out.provenance = meta.value("provenance", nlohmann::json::object());
  for (auto* p : out.net_.encoder.params()) {
    const auto& t = ck.tensor(p->name);
    if (t.numel() != static_cast<std::size_t>(p->value.size())) {
      throw FormatError("tensor '" + p->name + "' has the wrong size");
    }
    for (std::size_t i = 0; i < t.numel(); ++i) p->value.data()[i] = static_cast<float>(t.values[i]);
  }
  out.net_.encoder.mark_initialized();
  out.net_.head.weights = ck.tensor("head.weights").values;
  out.net_.head.bias = ck.tensor("head.bias").values.at(0);
  return out;
}

// ---------------------------------------------------------------- training

namespace {

nn::Matrix<float> assemble(std::span<const Triplet> triplets, std::span<const std::size_t> order,
                           std::size_t begin, std::size_t end, const ImageProvider& images) {
  nn::Matrix<float> batch(static_cast<Eigen::Index>(kImageValues),
                          static_cast<Eigen::Index>(3 * (end - begin)));
  for (std::size_t i = begin; i < end; ++i) {
    const auto& t = triplets[order[i]];
    const auto col = static_cast<Eigen::Index>(3 * (i - begin));
    copy_tensor(images.tensor(t.anchor), batch.col(col).data());
    copy_tensor(images.tensor(t.positive), batch.col(col + 1).data());
    copy_tensor(images.tensor(t.negative), batch.col(col + 2).data());
  }
  return batch;
}

}  // namespace

SiameseCheckpoint train_siamese(std::span<const Triplet> triplets, const ImageProvider& images,
                                const SiameseTrainConfig& config, Side judge_side,
                                const nn::EncoderSpec& spec) {
  if (triplets.empty()) throw std::invalid_argument("train_siamese needs at least one triplet");
  if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  SiameseCheckpoint model(spec, judge_side, config.seed);
  model.train_config = config;
  auto& net = model.net();

  nn::Adam<float> encoder_opt(config.loss.learning_rate);
  nn::Adam<double> head_opt(config.loss.learning_rate);
  const auto dim = static_cast<Eigen::Index>(net.head.weights.size());
  nn::Param<double> head_w{"head.weights", nn::Matrix<double>::Zero(dim, 1), nn::Matrix<double>::Zero(dim, 1), true};
  nn::Param<double> head_b{"head.bias", nn::Matrix<double>::Zero(1, 1), nn::Matrix<double>::Zero(1, 1), true};
  for (Eigen::Index i = 0; i < dim; ++i) head_w.value(i, 0) = net.head.weights[static_cast<std::size_t>(i)];
  head_b.value(0, 0) = net.head.bias;

  std::vector<std::size_t> order(triplets.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed ^ 0x7a11ULL);
  const auto encoder_params = net.encoder.params();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const auto batch = assemble(triplets, order, begin, end, images);
      net.encoder.zero_grad();
      HeadGrad hg;
      nn::ForwardTrace<float> trace;
      const double loss = siamese_batch_loss(net, batch, config.loss, &hg, &trace);
      if (!std::isfinite(loss)) {
        throw Divergence("siamese loss became non-finite in epoch " + std::to_string(epoch));
      }
      net.encoder.commit(trace);
      encoder_opt.step(encoder_params);
      for (Eigen::Index i = 0; i < dim; ++i) head_w.grad(i, 0) = hg.weights[static_cast<std::size_t>(i)];
      head_b.grad(0, 0) = hg.bias;
      head_opt.step({&head_w, &head_b});
      for (Eigen::Index i = 0; i < dim; ++i) net.head.weights[static_cast<std::size_t>(i)] = head_w.value(i, 0);
      net.head.bias = head_b.value(0, 0);
      epoch_loss += loss * static_cast<double>(end - begin);
    }
    model.loss_log.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return model;
}

double triplet_accuracy(const SiameseCheckpoint& model, std::span<const Triplet> triplets,
                        const ImageProvider& images) {
  if (triplets.empty()) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 32;
  for (std::size_t s = 0; s < triplets.size(); s += kChunk) {
    const std::size_t m = std::min(kChunk, triplets.size() - s);
    std::vector<ImageTensor> batch;
    batch.reserve(3 * m);
    for (std::size_t i = 0; i < m; ++i) {
      const auto& t = triplets[s + i];
      batch.push_back(images.tensor(t.anchor));
      batch.push_back(images.tensor(t.positive));
      batch.push_back(images.tensor(t.negative));
    }
    const auto h = model.encode_batch(batch);
    for (std::size_t i = 0; i < m; ++i) {
      const double pp = head_probability(distance(h[3 * i], h[3 * i + 1]), model.net().head);
      const double pn = head_probability(distance(h[3 * i], h[3 * i + 2]), model.net().head);
      if (pp > pn) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(triplets.size());
}

}  // namespace reclab
