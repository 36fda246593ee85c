#include "reclab/tirr.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "reclab/error.hpp"
#include "reclab/evalkit.hpp"

namespace reclab {

namespace {

enum ParamIndex : std::size_t { kW, kU, kB, kW1, kB1, kW2, kB2, kW3, kB3, kParamCount };

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void activate_gates(DMatrix& g, int hidden, const GateForce* force) {
  const auto H = static_cast<Eigen::Index>(hidden);
  auto sig = [](double z) { return sigmoid(z); };
  g.topRows(2 * H) = g.topRows(2 * H).unaryExpr(sig);
  g.middleRows(2 * H, H) = g.middleRows(2 * H, H).array().tanh().matrix();
  g.bottomRows(H) = g.bottomRows(H).unaryExpr(sig);
  if (force) {
    if (force->input) g.topRows(H).setConstant(*force->input);
    if (force->forget) g.middleRows(H, H).setConstant(*force->forget);
  }
}

// gates holds activated i, f, write, o stacked by rows.
void cell_update(const DMatrix& gates, const DMatrix& s_prev, int hidden, DMatrix& s_new,
                 DMatrix& h_new, DMatrix& tanh_s) {
  const auto H = static_cast<Eigen::Index>(hidden);
  s_new = gates.middleRows(H, H).cwiseProduct(s_prev) +
          gates.topRows(H).cwiseProduct(gates.middleRows(2 * H, H));
  tanh_s = s_new.array().tanh().matrix();
  h_new = gates.bottomRows(H).cwiseProduct(tanh_s);
}

void glorot(DMatrix& m, std::mt19937_64& rng, double fan_in, double fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = dist(rng);
}

void relu_inplace(DMatrix& m) { m = m.cwiseMax(0.0); }

}  // namespace

TirrSpec TirrSpec::miniature() {
  TirrSpec s;
  s.sequence_length = 3;
  s.input_dim = 4;
  s.hidden = 4;
  s.candidate_units = 4;
  s.dense_units = 4;
  return s;
}

nlohmann::json to_json(const TirrSpec& s) {
  return {{"sequence_length", s.sequence_length}, {"input_dim", s.input_dim},
          {"hidden", s.hidden},                   {"candidate_units", s.candidate_units},
          {"dense_units", s.dense_units},         {"dropout", s.dropout}};
}

TirrSpec tirr_spec_from_json(const nlohmann::json& j) {
  TirrSpec s;
  s.sequence_length = j.value("sequence_length", s.sequence_length);
  s.input_dim = j.value("input_dim", s.input_dim);
  s.hidden = j.value("hidden", s.hidden);
  s.candidate_units = j.value("candidate_units", s.candidate_units);
  s.dense_units = j.value("dense_units", s.dense_units);
  s.dropout = j.value("dropout", s.dropout);
  return s;
}

LstmState LstmState::zero(int hidden) {
  LstmState st;
  st.s = DVector::Zero(hidden);
  st.h = DVector::Zero(hidden);
  st.f = st.i = st.write = st.o = DVector::Zero(hidden);
  return st;
}

LstmState lstm_step(const LstmState& prev, const DVector& input, const LstmWeights& w, bool masked,
                    const GateForce* force) {
  const auto H = static_cast<int>(w.U.cols());
  if (input.size() != w.W.cols() || prev.h.size() != H || prev.s.size() != H) {
    throw std::invalid_argument("lstm_step dimension mismatch");
  }
  if (masked) return prev;
  DMatrix g = w.W * input + w.U * prev.h;
  g.colwise() += w.b;
  activate_gates(g, H, force);
  DMatrix s_new, h_new, tanh_s;
  cell_update(g, prev.s, H, s_new, h_new, tanh_s);
  LstmState out;
  out.s = s_new.col(0);
  out.h = h_new.col(0);
  out.i = g.col(0).segment(0, H);
  out.f = g.col(0).segment(H, H);
  out.write = g.col(0).segment(2 * H, H);
  out.o = g.col(0).segment(3 * H, H);
  return out;
}

TirrBatch make_batch(std::span<const DirectedInput* const> inputs, int input_dim) {
  TirrBatch b;
  const auto n = static_cast<Eigen::Index>(inputs.size());
  std::size_t length = 0;
  for (const auto* in : inputs) length = std::max(length, in->history.length());
  b.steps.assign(length, DMatrix::Zero(input_dim, n));
  b.mask = decltype(b.mask)::Zero(static_cast<Eigen::Index>(length), n);
  b.candidate.resize(input_dim, n);
  for (Eigen::Index c = 0; c < n; ++c) {
    const auto& in = *inputs[static_cast<std::size_t>(c)];
    if (in.history.mask.size() != in.history.steps.size()) {
      throw std::invalid_argument("history mask and steps differ in length");
    }
    const std::size_t offset = length - in.history.length();
    for (std::size_t t = 0; t < in.history.length(); ++t) {
      if (!in.history.mask[t]) continue;
      const auto& v = in.history.steps[t];
      for (int d = 0; d < input_dim; ++d) b.steps[offset + t](d, c) = v[static_cast<std::size_t>(d)];
      b.mask(static_cast<Eigen::Index>(offset + t), c) = 1;
    }
    for (int d = 0; d < input_dim; ++d) b.candidate(d, c) = in.candidate[static_cast<std::size_t>(d)];
  }
  return b;
}

InputScaling fit_input_scaling(std::span<const PairInput> pairs, int input_dim) {
  const auto D = static_cast<Eigen::Index>(input_dim);
  DVector sq = DVector::Zero(D), sum = DVector::Zero(D), csq = DVector::Zero(D);
  double steps = 0, cands = 0;
  for (const auto& pair : pairs) {
    const bool canonical = pair.x.side == Side::X;
    for (const auto* in : {canonical ? &pair.x_to_y : &pair.y_to_x, canonical ? &pair.y_to_x : &pair.x_to_y}) {
      for (std::size_t t = 0; t < in->history.length(); ++t) {
        if (!in->history.mask[t]) continue;
        for (Eigen::Index d = 0; d < D; ++d) sq(d) += in->history.steps[t][d] * in->history.steps[t][d];
        ++steps;
      }
      for (Eigen::Index d = 0; d < D; ++d) {
        sum(d) += in->candidate[d];
        csq(d) += in->candidate[d] * in->candidate[d];
      }
      ++cands;
    }
  }
  InputScaling out;
  const auto inverse = [](double spread) { return spread > 1e-8 ? 1.0 / spread : 1.0; };
  out.step_scale = DVector::Ones(D);
  out.candidate_mean = DVector::Zero(D);
  out.candidate_scale = DVector::Ones(D);
  for (Eigen::Index d = 0; d < D; ++d) {
    if (steps > 0) out.step_scale(d) = inverse(std::sqrt(sq(d) / steps));
    if (cands > 0) {
      const double mean = sum(d) / cands;
      out.candidate_mean(d) = mean;
      out.candidate_scale(d) = inverse(std::sqrt(std::max(0.0, csq(d) / cands - mean * mean)));
    }
  }
  return out;
}

// ---------------------------------------------------------------- network

TirrNet::TirrNet(TirrSpec spec) : spec_(spec) {
  const int D = spec_.input_dim, H = spec_.hidden, C = spec_.candidate_units, E = spec_.dense_units;
  if (D <= 0 || H <= 0 || C <= 0 || E <= 0 || spec_.dropout < 0.0 || spec_.dropout >= 1.0) {
    throw ConfigError("invalid TIRR dimensions");
  }
  auto make = [](std::string name, int r, int c) {
    return nn::Param<double>{std::move(name), DMatrix::Zero(r, c), DMatrix::Zero(r, c), true};
  };
  params_.push_back(make("lstm.input_kernel", 4 * H, D));
  params_.push_back(make("lstm.recurrent_kernel", 4 * H, H));
  params_.push_back(make("lstm.bias", 4 * H, 1));
  params_.push_back(make("dense1.kernel", C, D));
  params_.push_back(make("dense1.bias", C, 1));
  params_.push_back(make("dense2.kernel", E, H + C));
  params_.push_back(make("dense2.bias", E, 1));
  params_.push_back(make("output.kernel", 1, E));
  params_.push_back(make("output.bias", 1, 1));
}

void TirrNet::set_input_scaling(InputScaling scaling) {
  const auto D = static_cast<Eigen::Index>(spec_.input_dim);
  if (!scaling.identity() && (scaling.step_scale.size() != D || scaling.candidate_mean.size() != D ||
                              scaling.candidate_scale.size() != D)) {
    throw std::invalid_argument("input scaling width mismatch");
  }
  scaling_ = std::move(scaling);
}

TirrBatch TirrNet::batch(std::span<const DirectedInput* const> inputs) const {
  TirrBatch b = make_batch(inputs, spec_.input_dim);
  if (scaling_.identity()) return b;
  for (auto& step : b.steps) step = scaling_.step_scale.asDiagonal() * step;
  b.candidate.colwise() -= scaling_.candidate_mean;
  b.candidate = scaling_.candidate_scale.asDiagonal() * b.candidate;
  return b;
}

void TirrNet::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int D = spec_.input_dim, H = spec_.hidden, C = spec_.candidate_units, E = spec_.dense_units;
  glorot(p(kW).value, rng, D, 4.0 * H);
  glorot(p(kU).value, rng, H, 4.0 * H);
  p(kB).value.setZero();
  p(kB).value.middleRows(H, H).setOnes();
  glorot(p(kW1).value, rng, D, C);
  p(kB1).value.setZero();
  glorot(p(kW2).value, rng, H + C, E);
  p(kB2).value.setZero();
  glorot(p(kW3).value, rng, E, 1);
  p(kB3).value.setZero();
  initialized_ = true;
}

LstmWeights TirrNet::lstm_weights() const {
  return {p(kW).value, p(kU).value, p(kB).value.col(0)};
}

DMatrix TirrNet::forward(const TirrBatch& batch, nn::Mode mode, TirrCache* cache,
                         std::mt19937_64* rng, const DMatrix* fixed_dropout) const {
  if (!initialized_) throw UninitializedWeights("TIRR weights are not initialized");
  const int H = spec_.hidden;
  const Eigen::Index n = batch.columns();
  const std::size_t L = batch.steps.size();
  if (batch.candidate.rows() != spec_.input_dim) throw std::invalid_argument("TIRR input width mismatch");

  TirrCache local;
  TirrCache& c = cache ? *cache : local;
  c.h.clear();
  c.s.clear();
  c.gates.clear();
  c.tanh_s.clear();

  std::size_t first = 0;
  while (first < L && batch.mask.row(static_cast<Eigen::Index>(first)).maxCoeff() == 0) ++first;
  c.first_step = first;

  DMatrix h = DMatrix::Zero(H, n), s = DMatrix::Zero(H, n);
  DMatrix g, s_new, h_new, tanh_s;
  for (std::size_t t = first; t < L; ++t) {
    g = p(kW).value * batch.steps[t] + p(kU).value * h;
    g.colwise() += p(kB).value.col(0);
    activate_gates(g, H, nullptr);
    cell_update(g, s, H, s_new, h_new, tanh_s);
    const auto row = batch.mask.row(static_cast<Eigen::Index>(t));
    for (Eigen::Index col = 0; col < n; ++col) {
      if (!row(col)) {
        s_new.col(col) = s.col(col);
        h_new.col(col) = h.col(col);
      }
    }
    if (cache) {
      c.h.push_back(h);
      c.s.push_back(s);
      c.gates.push_back(g);
      c.tanh_s.push_back(tanh_s);
    }
    h.swap(h_new);
    s.swap(s_new);
  }

  c.h_final = h;
  c.cand_pre = p(kW1).value * batch.candidate;
  c.cand_pre.colwise() += p(kB1).value.col(0);
  c.cand = c.cand_pre;
  relu_inplace(c.cand);
  c.concat.resize(H + spec_.candidate_units, n);
  c.concat.topRows(H) = h;
  c.concat.bottomRows(spec_.candidate_units) = c.cand;
  c.dense_pre = p(kW2).value * c.concat;
  c.dense_pre.colwise() += p(kB2).value.col(0);
  c.dense = c.dense_pre;
  relu_inplace(c.dense);

  DMatrix dropped = c.dense;
  c.dropout_mask.resize(0, 0);
  if (mode == nn::Mode::Train && spec_.dropout > 0.0) {
    if (fixed_dropout) {
      if (fixed_dropout->rows() != c.dense.rows() || fixed_dropout->cols() != n) {
        throw std::invalid_argument("dropout mask shape mismatch");
      }
      c.dropout_mask = *fixed_dropout;
    } else {
      if (!rng) throw std::invalid_argument("training forward needs a random generator");
      std::bernoulli_distribution keep(1.0 - spec_.dropout);
      const double scale = 1.0 / (1.0 - spec_.dropout);
      c.dropout_mask.resize(c.dense.rows(), n);
      for (Eigen::Index col = 0; col < n; ++col)
        for (Eigen::Index r = 0; r < c.dense.rows(); ++r) c.dropout_mask(r, col) = keep(*rng) ? scale : 0.0;
    }
    dropped = dropped.cwiseProduct(c.dropout_mask);
  }
  c.logits = p(kW3).value * dropped;
  c.logits.array() += p(kB3).value(0, 0);
  c.probs = c.logits.unaryExpr([](double z) { return sigmoid(z); });
  return c.probs;
}

void TirrNet::backward(const TirrBatch& batch, const TirrCache& c, const DMatrix& grad_probs) {
  const int H = spec_.hidden;
  const auto Hi = static_cast<Eigen::Index>(H);
  const Eigen::Index n = batch.columns();
  if (grad_probs.cols() != n || c.probs.cols() != n) throw std::invalid_argument("TIRR backward shape mismatch");

  const DMatrix dlogit =
      grad_probs.cwiseProduct(c.probs.unaryExpr([](double q) { return q * (1.0 - q); }));
  DMatrix dropped = c.dense;
  if (c.dropout_mask.size()) dropped = dropped.cwiseProduct(c.dropout_mask);
  p(kW3).grad += dlogit * dropped.transpose();
  p(kB3).grad(0, 0) += dlogit.sum();
  DMatrix d_dense = p(kW3).value.transpose() * dlogit;
  if (c.dropout_mask.size()) d_dense = d_dense.cwiseProduct(c.dropout_mask);
  d_dense = d_dense.cwiseProduct((c.dense_pre.array() > 0.0).cast<double>().matrix());
  p(kW2).grad += d_dense * c.concat.transpose();
  p(kB2).grad += d_dense.rowwise().sum();
  const DMatrix d_concat = p(kW2).value.transpose() * d_dense;
  const DMatrix d_cand = d_concat.bottomRows(spec_.candidate_units)
                             .cwiseProduct((c.cand_pre.array() > 0.0).cast<double>().matrix());
  p(kW1).grad += d_cand * batch.candidate.transpose();
  p(kB1).grad += d_cand.rowwise().sum();

  DMatrix dh = d_concat.topRows(H);
  DMatrix ds = DMatrix::Zero(H, n);
  DMatrix dA(4 * Hi, n);
  for (std::size_t k = c.gates.size(); k-- > 0;) {
    const std::size_t t = c.first_step + k;
    const DMatrix& g = c.gates[k];
    const auto gi = g.topRows(Hi), gf = g.middleRows(Hi, Hi), gw = g.middleRows(2 * Hi, Hi),
               go = g.bottomRows(Hi);
    const DMatrix& ts = c.tanh_s[k];
    const DMatrix ds_total =
        ds + dh.cwiseProduct(go).cwiseProduct((1.0 - ts.array().square()).matrix());
    dA.topRows(Hi) = ds_total.cwiseProduct(gw).cwiseProduct(gi.cwiseProduct((1.0 - gi.array()).matrix()));
    dA.middleRows(Hi, Hi) =
        ds_total.cwiseProduct(c.s[k]).cwiseProduct(gf.cwiseProduct((1.0 - gf.array()).matrix()));
    dA.middleRows(2 * Hi, Hi) =
        ds_total.cwiseProduct(gi).cwiseProduct((1.0 - gw.array().square()).matrix());
    dA.bottomRows(Hi) =
        dh.cwiseProduct(ts).cwiseProduct(go.cwiseProduct((1.0 - go.array()).matrix()));
    DMatrix ds_prev = ds_total.cwiseProduct(gf);
    const auto row = batch.mask.row(static_cast<Eigen::Index>(t));
    for (Eigen::Index col = 0; col < n; ++col) {
      if (!row(col)) {
        dA.col(col).setZero();
        ds_prev.col(col) = ds.col(col);
      }
    }
    p(kW).grad += dA * batch.steps[t].transpose();
    p(kU).grad += dA * c.h[k].transpose();
    p(kB).grad += dA.rowwise().sum();
    DMatrix dh_prev = p(kU).value.transpose() * dA;
    for (Eigen::Index col = 0; col < n; ++col) {
      if (!row(col)) dh_prev.col(col) = dh.col(col);
    }
    dh.swap(dh_prev);
    ds.swap(ds_prev);
  }
}

void TirrNet::zero_grad() {
  for (auto& q : params_) q.grad.setZero();
}

std::vector<nn::Param<double>*> TirrNet::params() {
  std::vector<nn::Param<double>*> out;
  for (auto& q : params_) out.push_back(&q);
  return out;
}

std::vector<const nn::Param<double>*> TirrNet::params() const {
  std::vector<const nn::Param<double>*> out;
  for (const auto& q : params_) out.push_back(&q);
  return out;
}

std::size_t TirrNet::param_count() const {
  std::size_t n = 0;
  for (const auto& q : params_) n += static_cast<std::size_t>(q.value.size());
  return n;
}

// ---------------------------------------------------------------- inputs

EmbeddingTable EmbeddingTable::build(const SiamesePair& models, std::span<const UserId> users,
                                     const ImageProvider& images, std::uint32_t variant) {
  EmbeddingTable table;
  constexpr std::size_t kChunk = 128;
  for (Side side : {Side::X, Side::Y}) {
    std::vector<UserId> group;
    for (const auto& u : users)
      if (u.side == side) group.push_back(u);
    const auto& model = models.for_judge(opposite(side));
    for (std::size_t s = 0; s < group.size(); s += kChunk) {
      const std::size_t m = std::min(kChunk, group.size() - s);
      std::vector<ImageTensor> batch;
      batch.reserve(m);
      for (std::size_t i = 0; i < m; ++i) batch.push_back(images.tensor({group[s + i], variant}));
      const auto h = model.encode_batch(batch);
      for (std::size_t i = 0; i < m; ++i) table.set(group[s + i], h[i].h);
    }
  }
  return table;
}

const Vec128& EmbeddingTable::at(const UserId& user) const {
  const auto it = table_.find(user);
  if (it == table_.end()) throw MissingImage("no embedding for " + user.str());
  return it->second;
}

namespace {
Vec128 signed_distance(const Vec128& a, const Vec128& b, int polarity) {
  Vec128 out;
  for (std::size_t i = 0; i < kEmbeddingDim; ++i) out[i] = polarity * std::abs(a[i] - b[i]);
  return out;
}
}  // namespace

std::vector<Vec128> history_step_vectors(const PreferenceHistory& history,
                                         const Vec128& candidate_embedding,
                                         const EmbeddingTable& embeddings) {
  if (history.size() > kHistoryCap) throw SequenceTooLong("history longer than the cap");
  std::vector<Vec128> out;
  out.reserve(history.size());
  for (const auto& item : history.items) {
    out.push_back(signed_distance(embeddings.at(item.target), candidate_embedding, item.polarity));
  }
  return out;
}

std::vector<Vec128> history_step_vectors(const PreferenceHistory& history,
                                         const ImageTensor& candidate_image,
                                         const SiameseCheckpoint& siamese,
                                         const ImageProvider& images, std::uint32_t variant) {
  if (history.size() > kHistoryCap) throw SequenceTooLong("history longer than the cap");
  std::vector<ImageTensor> batch{candidate_image};
  for (const auto& item : history.items) batch.push_back(images.tensor({item.target, variant}));
  const auto h = siamese.encode_batch(batch);
  std::vector<Vec128> out;
  out.reserve(history.size());
  for (std::size_t t = 0; t < history.size(); ++t) {
    out.push_back(signed_distance(h[t + 1].h, h[0].h, history.items[t].polarity));
  }
  return out;
}

DirectedInput make_directed_input(const PreferenceHistory& history, const UserId& candidate,
                                  const EmbeddingTable& embeddings, std::size_t length) {
  DirectedInput in;
  in.candidate = embeddings.at(candidate);
  const auto steps = history_step_vectors(history, in.candidate, embeddings);
  in.history = pad_and_mask(steps, length);
  return in;
}

PairInput make_pair_input(const LabeledPair& pair, const ValidatedEventLog& context,
                          const EmbeddingTable& embeddings, const HistoryOptions& options,
                          std::size_t length) {
  PairInput in;
  in.x = pair.x;
  in.y = pair.y;
  in.label = pair.label == PairLabel::Match ? 1 : 0;
  HistoryOptions ox = options, oy = options;
  ox.exclude = pair.y;
  oy.exclude = pair.x;
  in.x_to_y = make_directed_input(build_history(pair.x, context, pair.reference_time, ox), pair.y,
                                  embeddings, length);
  in.y_to_x = make_directed_input(build_history(pair.y, context, pair.reference_time, oy), pair.x,
                                  embeddings, length);
  return in;
}

// ---------------------------------------------------------------- scoring

namespace {

std::vector<const DirectedInput*> canonical_columns(std::span<const PairInput> pairs) {
  std::vector<const DirectedInput*> cols;
  cols.reserve(2 * pairs.size());
  for (const auto& pr : pairs) {
    if (pr.x < pr.y) {
      cols.push_back(&pr.x_to_y);
      cols.push_back(&pr.y_to_x);
    } else {
      cols.push_back(&pr.y_to_x);
      cols.push_back(&pr.x_to_y);
    }
  }
  return cols;
}

}  // namespace

double TirrCheckpoint::directed_score(const DirectedInput& input) const {
  const DirectedInput* one = &input;
  const auto batch = net_.batch(std::span<const DirectedInput* const>(&one, 1));
  return net_.forward(batch, nn::Mode::Infer)(0, 0);
}

double TirrCheckpoint::match_probability(const PairInput& pair) const {
  return match_probabilities(std::span<const PairInput>(&pair, 1)).front();
}

std::vector<double> TirrCheckpoint::match_probabilities(std::span<const PairInput> pairs) const {
  std::vector<double> out;
  out.reserve(pairs.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t s = 0; s < pairs.size(); s += kChunk) {
    const auto part = pairs.subspan(s, std::min(kChunk, pairs.size() - s));
    const auto cols = canonical_columns(part);
    const auto probs = net_.forward(net_.batch(cols), nn::Mode::Infer);
    for (std::size_t k = 0; k < part.size(); ++k) {
      const auto c = static_cast<Eigen::Index>(2 * k);
      out.push_back(0.5 * (probs(0, c) + probs(0, c + 1)));
    }
  }
  return out;
}

double tirr_batch_loss(TirrNet& net, std::span<const PairInput> pairs, nn::Mode mode,
                       bool accumulate, std::mt19937_64* rng, const DMatrix* fixed_dropout) {
  if (pairs.empty()) throw std::invalid_argument("empty TIRR batch");
  const auto cols = canonical_columns(pairs);
  const auto batch = net.batch(cols);
  TirrCache cache;
  const DMatrix probs = net.forward(batch, mode, &cache, rng, fixed_dropout);
  const double n = static_cast<double>(pairs.size());
  double loss = 0.0;
  DMatrix grad(1, batch.columns());
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto c = static_cast<Eigen::Index>(2 * k);
    const double r = 0.5 * (probs(0, c) + probs(0, c + 1));
    loss += bce_loss(r, pairs[k].label);
    const double g = 0.5 * bce_loss_grad(r, pairs[k].label) / n;
    grad(0, c) = g;
    grad(0, c + 1) = g;
  }
  if (accumulate) net.backward(batch, cache, grad);
  return loss / n;
}

TirrCheckpoint train_tirr(std::span<const PairInput> pairs, const SiamesePair& siamese,
                          const TirrTrainConfig& config, const TirrSpec& spec) {
  if (pairs.empty()) throw std::invalid_argument("train_tirr needs labeled pairs");
  if (config.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (config.validation_fraction < 0.0 || config.validation_fraction >= 1.0) {
    throw std::invalid_argument("validation_fraction must lie in [0, 1)");
  }

  // a fixed slice of the pairs, by position, for epoch selection
  std::vector<PairInput> fit, held;
  {
    std::vector<std::size_t> idx(pairs.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 split_rng(config.seed ^ 0x5e1ec7ULL);
    std::shuffle(idx.begin(), idx.end(), split_rng);
    const auto n_held = static_cast<std::size_t>(config.validation_fraction * static_cast<double>(pairs.size()));
    std::vector<char> is_held(pairs.size(), 0);
    for (std::size_t k = 0; k < n_held; ++k) is_held[idx[k]] = 1;
    int held_pos = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      (is_held[i] ? held : fit).push_back(pairs[i]);
      if (is_held[i]) held_pos += pairs[i].label;
    }
    if (held_pos == 0 || held_pos == static_cast<int>(held.size()) || fit.empty()) {
      fit.assign(pairs.begin(), pairs.end());
      held.clear();
    }
  }

  TirrNet net(spec);
  net.initialize(config.seed);
  net.set_input_scaling(fit_input_scaling(fit, spec.input_dim));
  TirrCheckpoint model(std::move(net), siamese.x_judge.to_checkpoint().digest(),
                       siamese.y_judge.to_checkpoint().digest());
  model.train_config = config;
  auto& tn = model.net();
  nn::Adam<double> opt(config.learning_rate);
  const auto params = tn.params();

  std::vector<std::size_t> order(fit.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed ^ 0x7141ULL);
  std::vector<PairInput> chunk;
  std::vector<DMatrix> best;
  double best_auc = -1.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      chunk.clear();
      for (std::size_t i = begin; i < end; ++i) chunk.push_back(fit[order[i]]);
      tn.zero_grad();
      const double loss = tirr_batch_loss(tn, chunk, nn::Mode::Train, true, &rng);
      if (!std::isfinite(loss)) {
        throw Divergence("TIRR loss became non-finite in epoch " + std::to_string(epoch));
      }
      opt.step(params);
      total += loss * static_cast<double>(end - begin);
    }
    model.loss_log.push_back(total / static_cast<double>(order.size()));
    if (held.empty()) continue;
    const auto probs = model.match_probabilities(held);
    std::vector<ScoredPair> scored;
    scored.reserve(held.size());
    for (std::size_t i = 0; i < held.size(); ++i) scored.push_back({held[i].x, held[i].y, probs[i], held[i].label});
    const double auc = roc_and_auc(scored).auc;
    model.validation_auc.push_back(auc);
    if (auc > best_auc) {
      best_auc = auc;
      model.selected_epoch = epoch + 1;
      best.clear();
      for (const auto* q : params) best.push_back(q->value);
    }
  }
  if (!best.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  }
  return model;
}

Checkpoint TirrCheckpoint::to_checkpoint() const {
  Checkpoint ck(kKind);
  auto& meta = ck.metadata();
  meta["spec"] = to_json(net_.spec());
  meta["siamese_digests"] = {{"x", sx_}, {"y", sy_}};
  meta["loss_log"] = loss_log;
  meta["train"] = {{"epochs", train_config.epochs},
                   {"batch_size", train_config.batch_size},
                   {"learning_rate", train_config.learning_rate},
                   {"seed", train_config.seed},
                   {"validation_fraction", train_config.validation_fraction}};
  meta["validation_auc"] = validation_auc;
  meta["selected_epoch"] = selected_epoch;
  meta["provenance"] = provenance;
  for (const auto* q : net_.params()) {
    ck.add(q->name, {q->value.rows(), q->value.cols()},
           std::span<const double>(q->value.data(), static_cast<std::size_t>(q->value.size())));
  }
  const auto& sc = net_.input_scaling();
  meta["input_scaling"] = !sc.identity();
  if (!sc.identity()) {
    for (const auto& [name, v] : {std::pair{"input.step_scale", &sc.step_scale},
                                  std::pair{"input.candidate_mean", &sc.candidate_mean},
                                  std::pair{"input.candidate_scale", &sc.candidate_scale}}) {
      ck.add(name, {v->size()}, std::span<const double>(v->data(), static_cast<std::size_t>(v->size())));
    }
  }
  return ck;
}

TirrCheckpoint TirrCheckpoint::from_checkpoint(const Checkpoint& ck, const SiamesePair& siamese) {
  ck.expect_kind(kKind);
  const auto& meta = ck.metadata();
  const auto sx = meta.at("siamese_digests").at("x").get<std::string>();
  const auto sy = meta.at("siamese_digests").at("y").get<std::string>();
  if (sx != siamese.x_judge.to_checkpoint().digest() ||
      sy != siamese.y_judge.to_checkpoint().digest()) {
    throw ProvenanceError("TIRR checkpoint was trained against different Siamese models");
  }
  TirrNet net(tirr_spec_from_json(meta.at("spec")));
  for (auto* q : net.params()) {
    const auto& t = ck.tensor(q->name);
    if (t.numel() != static_cast<std::size_t>(q->value.size())) {
      throw FormatError("tensor '" + q->name + "' has the wrong size");
    }
    std::copy(t.values.begin(), t.values.end(), q->value.data());
  }
  if (meta.value("input_scaling", false)) {
    const auto load = [&](const char* name) {
      const auto& t = ck.tensor(name);
      if (t.numel() != static_cast<std::size_t>(net.spec().input_dim)) {
        throw FormatError(std::string("tensor '") + name + "' has the wrong size");
      }
      return DVector(Eigen::Map<const DVector>(t.values.data(), static_cast<Eigen::Index>(t.numel())));
    };
    net.set_input_scaling({load("input.step_scale"), load("input.candidate_mean"), load("input.candidate_scale")});
  }
  net.mark_initialized();
  TirrCheckpoint out(std::move(net), sx, sy);
  out.loss_log = meta.at("loss_log").get<std::vector<double>>();
  const auto& tr = meta.at("train");
  out.train_config.epochs = tr.at("epochs").get<std::size_t>();
  out.train_config.batch_size = tr.at("batch_size").get<std::size_t>();
  out.train_config.learning_rate = tr.at("learning_rate").get<double>();
  out.train_config.seed = tr.at("seed").get<std::uint64_t>();
  out.train_config.validation_fraction = tr.at("validation_fraction").get<double>();
  out.validation_auc = meta.at("validation_auc").get<std::vector<double>>();
  out.selected_epoch = meta.at("selected_epoch").get<std::size_t>();
  out.provenance = meta.value("provenance", nlohmann::json::object());
  return out;
}

// ---------------------------------------------------------------- recommendation

double TirrRecommender::match_probability(const UserId& x, const UserId& y, Tick reference_time) const {
  LabeledPair pr{x, y, PairLabel::LikeDislike, reference_time};
  return model_->match_probability(
      make_pair_input(pr, *context_, *embeddings_, options_, model_->net().spec().sequence_length));
}

std::vector<std::pair<UserId, double>> TirrRecommender::recommend_top_k(
    const UserId& x, std::span<const UserId> pool, std::size_t k, Tick reference_time) const {
  if (k == 0) throw std::invalid_argument("k must be at least 1");
  if (pool.empty()) throw EmptyPool("candidate pool is empty");
  std::vector<PairInput> inputs;
  inputs.reserve(pool.size());
  for (const auto& y : pool) {
    LabeledPair pr{x, y, PairLabel::LikeDislike, reference_time};
    inputs.push_back(make_pair_input(pr, *context_, *embeddings_, options_,
                                     model_->net().spec().sequence_length));
  }
  const auto scores = model_->match_probabilities(inputs);
  std::vector<std::pair<UserId, double>> ranked;
  for (std::size_t i = 0; i < pool.size(); ++i) ranked.emplace_back(pool[i], scores[i]);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  if (ranked.size() > k) ranked.resize(k);
  return ranked;
}

}  // namespace reclab
