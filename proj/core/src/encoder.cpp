#include "reclab/nn/encoder.hpp"

#include <stdexcept>

#include "reclab/error.hpp"

namespace reclab::nn {

namespace {

using Kind = LayerSpec::Kind;

LayerSpec conv(std::string name, int channels, int kernel) {
  return {Kind::Conv, std::move(name), channels, kernel, true};
}
LayerSpec pool(std::string name) { return {Kind::MaxPool, std::move(name), 0, 3, false}; }
LayerSpec norm(std::string name) { return {Kind::ChannelNorm, std::move(name), 0, 0, false}; }
LayerSpec dense(std::string name, int units, bool relu) {
  return {Kind::Dense, std::move(name), units, 0, relu};
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Conv: return "conv";
    case Kind::MaxPool: return "maxpool";
    case Kind::ChannelNorm: return "channelnorm";
    case Kind::Dense: return "dense";
  }
  return "?";
}

Kind kind_from(const std::string& s) {
  if (s == "conv") return Kind::Conv;
  if (s == "maxpool") return Kind::MaxPool;
  if (s == "channelnorm") return Kind::ChannelNorm;
  if (s == "dense") return Kind::Dense;
  throw FormatError("unknown layer kind '" + s + "'");
}

}  // namespace

EncoderSpec EncoderSpec::face_encoder() {
  return {{3, 100, 100},
          {conv("conv1", 3, 7), pool("maxpool1"), norm("normalization1"), conv("conv2", 64, 3),
           pool("maxpool2"), norm("normalization2"), conv("conv3", 192, 2), pool("maxpool3"),
           conv("conv4", 384, 2), pool("maxpool4"), conv("conv5", 256, 1), conv("conv6", 256, 3),
           pool("maxpool5"), dense("dense1", 256, true), dense("dense2", 128, false)}};
}

EncoderSpec EncoderSpec::miniature() {
  return {{3, 8, 8},
          {conv("conv1", 3, 3), pool("maxpool1"), norm("normalization1"), conv("conv2", 4, 2),
           pool("maxpool2"), dense("dense1", 8, true), dense("dense2", 4, false)}};
}

std::vector<Shape> EncoderSpec::shapes() const {
  std::vector<Shape> out;
  Shape s = input;
  for (const auto& l : layers) {
    switch (l.kind) {
      case Kind::Conv: s = {l.units, s.h, s.w}; break;
      case Kind::MaxPool: s = {s.c, (s.h + l.kernel - 1) / l.kernel, (s.w + l.kernel - 1) / l.kernel}; break;
      case Kind::ChannelNorm: break;
      case Kind::Dense: s = {l.units, 1, 1}; break;
    }
    out.push_back(s);
  }
  return out;
}

int EncoderSpec::output_dim() const {
  const auto s = shapes();
  return s.empty() ? input.size() : s.back().size();
}

nlohmann::json to_json(const EncoderSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    layers.push_back({{"kind", kind_name(l.kind)}, {"name", l.name}, {"units", l.units},
                      {"kernel", l.kernel}, {"relu", l.relu}});
  }
  return {{"input", {spec.input.c, spec.input.h, spec.input.w}}, {"layers", layers}};
}

EncoderSpec encoder_spec_from_json(const nlohmann::json& j) {
  EncoderSpec spec;
  const auto& in = j.at("input");
  spec.input = {in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
  for (const auto& l : j.at("layers")) {
    spec.layers.push_back({kind_from(l.at("kind").get<std::string>()), l.at("name").get<std::string>(),
                           l.at("units").get<int>(), l.at("kernel").get<int>(), l.at("relu").get<bool>()});
  }
  return spec;
}

template <class T>
Encoder<T>::Encoder(EncoderSpec spec) : spec_(std::move(spec)) {
  build();
}

template <class T>
Encoder<T>::Encoder(const Encoder& other) : spec_(other.spec_), initialized_(other.initialized_) {
  build();
  auto dst = params();
  auto src = other.params();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

template <class T>
Encoder<T>& Encoder<T>::operator=(const Encoder& other) {
  if (this != &other) {
    Encoder copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <class T>
void Encoder<T>::build() {
  layers_.clear();
  Shape s = spec_.input;
  for (const auto& l : spec_.layers) {
    std::unique_ptr<Layer<T>> layer;
    switch (l.kind) {
      case Kind::Conv: layer = std::make_unique<Conv2d<T>>(l.name, s, l.units, l.kernel, l.relu); break;
      case Kind::MaxPool: layer = std::make_unique<MaxPool2d<T>>(l.name, s, l.kernel); break;
      case Kind::ChannelNorm: layer = std::make_unique<ChannelNorm<T>>(l.name, s); break;
      case Kind::Dense: layer = std::make_unique<Dense<T>>(l.name, s.size(), l.units, l.relu); break;
    }
    s = layer->output_shape();
    layers_.push_back(std::move(layer));
  }
}

template <class T>
void Encoder<T>::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) l->initialize(rng);
  initialized_ = true;
}

template <class T>
Matrix<T> Encoder<T>::forward(const Matrix<T>& input, Mode mode, ForwardTrace<T>* trace) const {
  if (!initialized_) throw UninitializedWeights("encoder weights are not initialized");
  if (input.rows() != spec_.input.size()) {
    throw std::invalid_argument("encoder input has " + std::to_string(input.rows()) +
                                " rows, expected " + std::to_string(spec_.input.size()));
  }
  if (trace) {
    trace->activations.assign(layers_.size() + 1, Matrix<T>());
    trace->caches.assign(layers_.size(), LayerCache<T>());
    trace->activations[0] = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i]->forward(trace->activations[i], trace->activations[i + 1], mode, trace->caches[i]);
    }
    return trace->activations.back();
  }
  Matrix<T> current = input, next;
  LayerCache<T> cache;
  for (const auto& l : layers_) {
    l->forward(current, next, mode, cache);
    std::swap(current, next);
  }
  return current;
}

template <class T>
void Encoder<T>::backward(const ForwardTrace<T>& trace, const Matrix<T>& grad_output) {
  Matrix<T> grad = grad_output, grad_in;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    layers_[i]->backward(trace.activations[i], trace.activations[i + 1], grad, trace.caches[i],
                         i > 0 ? &grad_in : nullptr);
    if (i > 0) std::swap(grad, grad_in);
  }
}

template <class T>
void Encoder<T>::commit(const ForwardTrace<T>& trace) {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->commit(trace.caches[i]);
}

template <class T>
void Encoder<T>::zero_grad() {
  for (auto* p : params()) p->grad.setZero();
}

template <class T>
std::vector<Param<T>*> Encoder<T>::params() {
  std::vector<Param<T>*> out;
  for (auto& l : layers_) {
    for (auto& p : l->params()) out.push_back(&p);
  }
  return out;
}

template <class T>
std::vector<const Param<T>*> Encoder<T>::params() const {
  std::vector<const Param<T>*> out;
  for (const auto& l : layers_) {
    for (const auto& p : l->params()) out.push_back(&p);
  }
  return out;
}

template <class T>
std::size_t Encoder<T>::param_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->param_count();
  return n;
}

template class Encoder<float>;
template class Encoder<double>;

}  // namespace reclab::nn
