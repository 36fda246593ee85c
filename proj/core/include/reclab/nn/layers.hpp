#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace reclab::nn {

template <class T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

enum class Mode { Train, Infer };

/// Feature-map geometry. A batch is a (c*h*w) x N matrix, one planar CHW image per column.
struct Shape {
  int c = 0, h = 0, w = 0;
  int size() const noexcept { return c * h * w; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <class T>
struct Param {
  std::string name;
  Matrix<T> value;
  Matrix<T> grad;
  bool trainable = true;
};

/// Per-call scratch a layer hands from forward() to backward()/commit().
template <class T>
struct LayerCache {
  Vector<T> a, b;
};

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual const std::string& name() const noexcept = 0;
  virtual Shape output_shape() const noexcept = 0;
  virtual void forward(const Matrix<T>& in, Matrix<T>& out, Mode mode, LayerCache<T>& cache) const = 0;
  /// Accumulates parameter gradients; writes dL/din when grad_in is non-null.
  virtual void backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                        const LayerCache<T>& cache, Matrix<T>* grad_in) = 0;
  /// Applies batch statistics recorded during a training forward pass.
  virtual void commit(const LayerCache<T>&) {}
  virtual void initialize(std::mt19937_64& rng) = 0;

  std::vector<Param<T>>& params() noexcept { return params_; }
  const std::vector<Param<T>>& params() const noexcept { return params_; }
  std::size_t param_count() const noexcept;

 protected:
  std::vector<Param<T>> params_;
};

/// Stride-1 convolution with TF-style "same" padding (extra pad after for even kernels),
/// optionally followed by ReLU.
template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, Shape in, int out_channels, int kernel, bool relu);

  const std::string& name() const noexcept override { return name_; }
  Shape output_shape() const noexcept override { return {out_c_, in_.h, in_.w}; }
  void forward(const Matrix<T>& in, Matrix<T>& out, Mode mode, LayerCache<T>& cache) const override;
  void backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                const LayerCache<T>& cache, Matrix<T>* grad_in) override;
  void initialize(std::mt19937_64& rng) override;

 private:
  int patch() const noexcept { return in_.c * kernel_ * kernel_; }
  int chunk_images() const noexcept;
  void im2col(const T* image, T* col, int rows_stride, int row0) const;
  void col2im(const T* col, int rows_stride, int row0, T* image) const;

  std::string name_;
  Shape in_;
  int out_c_, kernel_, pad_before_;
  bool relu_;
};

/// Max pooling, square window, stride equal to the window, ceiling output size.
template <class T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::string name, Shape in, int window);

  const std::string& name() const noexcept override { return name_; }
  Shape output_shape() const noexcept override { return out_; }
  void forward(const Matrix<T>& in, Matrix<T>& out, Mode mode, LayerCache<T>& cache) const override;
  void backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                const LayerCache<T>& cache, Matrix<T>* grad_in) override;
  void initialize(std::mt19937_64&) override {}

 private:
  std::string name_;
  Shape in_, out_;
  int window_;
};

/// Per-channel normalization: learned scale/shift plus tracked running mean and
/// variance (4 values per channel). Batch statistics in training, running ones in inference.
template <class T>
class ChannelNorm final : public Layer<T> {
 public:
  ChannelNorm(std::string name, Shape in, double momentum = 0.9, double epsilon = 1e-5);

  const std::string& name() const noexcept override { return name_; }
  Shape output_shape() const noexcept override { return in_; }
  void forward(const Matrix<T>& in, Matrix<T>& out, Mode mode, LayerCache<T>& cache) const override;
  void backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                const LayerCache<T>& cache, Matrix<T>* grad_in) override;
  void commit(const LayerCache<T>& cache) override;
  void initialize(std::mt19937_64&) override;

 private:
  std::string name_;
  Shape in_;
  double momentum_, epsilon_;
  // cache.a = batch mean, cache.b = batch inverse std
};

/// Fully connected layer over the flattened input, optional ReLU.
template <class T>
class Dense final : public Layer<T> {
 public:
  Dense(std::string name, int in_features, int out_features, bool relu);

  const std::string& name() const noexcept override { return name_; }
  Shape output_shape() const noexcept override { return {out_, 1, 1}; }
  void forward(const Matrix<T>& in, Matrix<T>& out, Mode mode, LayerCache<T>& cache) const override;
  void backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                const LayerCache<T>& cache, Matrix<T>* grad_in) override;
  void initialize(std::mt19937_64& rng) override;

 private:
  std::string name_;
  int in_, out_;
  bool relu_;
};

/// Adam with bias correction. Moment buffers follow the order of the parameter list.
template <class T>
class Adam {
 public:
  explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                double epsilon = 1e-7)
      : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

  void step(const std::vector<Param<T>*>& params);
  std::int64_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Matrix<T>> m_, v_;
};

}  // namespace reclab::nn
