#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reclab/nn/layers.hpp"

namespace reclab::nn {

struct LayerSpec {
  enum class Kind { Conv, MaxPool, ChannelNorm, Dense };
  Kind kind = Kind::Conv;
  std::string name;
  int units = 0;   // output channels (conv) or features (dense)
  int kernel = 0;  // conv kernel side, or pooling window
  bool relu = false;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Layer list of a convolutional encoder. Dense layers flatten whatever precedes them.
struct EncoderSpec {
  Shape input;
  std::vector<LayerSpec> layers;

  /// The face encoder: 100x100x3 -> 128, 1,134,472 parameters.
  static EncoderSpec face_encoder();
  /// Same layer kinds on an 8x8x3 input, a few hundred parameters (for gradient checks).
  static EncoderSpec miniature();

  /// Output geometry after each layer.
  std::vector<Shape> shapes() const;
  int output_dim() const;

  friend bool operator==(const EncoderSpec&, const EncoderSpec&) = default;
};

nlohmann::json to_json(const EncoderSpec& spec);
EncoderSpec encoder_spec_from_json(const nlohmann::json& j);

/// Activations of one forward pass, kept for backward().
template <class T>
struct ForwardTrace {
  std::vector<Matrix<T>> activations;  // [0] = input, [i + 1] = output of layer i
  std::vector<LayerCache<T>> caches;
};

/// Shared-weight encoder; both Siamese branches call the same instance.
template <class T>
class Encoder {
 public:
  explicit Encoder(EncoderSpec spec);
  Encoder(const Encoder& other);
  Encoder& operator=(const Encoder& other);
  Encoder(Encoder&&) noexcept = default;
  Encoder& operator=(Encoder&&) noexcept = default;

  const EncoderSpec& spec() const noexcept { return spec_; }
  bool initialized() const noexcept { return initialized_; }
  void initialize(std::uint64_t seed);
  void mark_initialized() noexcept { initialized_ = true; }

  /// input: one flattened CHW image per column. Returns output_dim x N.
  /// In Mode::Infer no state is touched, so concurrent calls are safe.
  Matrix<T> forward(const Matrix<T>& input, Mode mode, ForwardTrace<T>* trace = nullptr) const;
  /// Accumulates parameter gradients from dL/d(output).
  void backward(const ForwardTrace<T>& trace, const Matrix<T>& grad_output);
  /// Folds batch statistics of a training pass into the tracked running statistics.
  void commit(const ForwardTrace<T>& trace);

  void zero_grad();
  std::vector<Param<T>*> params();
  std::vector<const Param<T>*> params() const;

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }
  std::size_t param_count() const;

 private:
  void build();

  EncoderSpec spec_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  bool initialized_ = false;
};

}  // namespace reclab::nn
