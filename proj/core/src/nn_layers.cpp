#include "reclab/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace reclab::nn {

template <class T>
std::size_t Layer<T>::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

namespace {

template <class T>
Param<T> make_param(std::string name, Eigen::Index rows, Eigen::Index cols, bool trainable) {
  return {std::move(name), Matrix<T>::Zero(rows, cols), Matrix<T>::Zero(rows, cols), trainable};
}

template <class T>
void fill_uniform(Matrix<T>& m, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

}  // namespace

// ---------------------------------------------------------------- Conv2d

template <class T>
Conv2d<T>::Conv2d(std::string name, Shape in, int out_channels, int kernel, bool relu)
    : name_(std::move(name)),
      in_(in),
      out_c_(out_channels),
      kernel_(kernel),
      pad_before_((kernel - 1) / 2),
      relu_(relu) {
  if (kernel < 1 || out_channels < 1) throw std::invalid_argument("bad conv geometry");
  this->params_.push_back(make_param<T>(name_ + ".kernel", patch(), out_c_, true));
  this->params_.push_back(make_param<T>(name_ + ".bias", out_c_, 1, true));
}

template <class T>
int Conv2d<T>::chunk_images() const noexcept {
  constexpr long kBudget = 4L << 20;  // values in one im2col buffer
  const long per_image = static_cast<long>(in_.h) * in_.w * patch();
  return static_cast<int>(std::max(1L, kBudget / per_image));
}

template <class T>
void Conv2d<T>::im2col(const T* image, T* col, int rows_stride, int row0) const {
  const int h = in_.h, w = in_.w, k = kernel_;
  for (int c = 0; c < in_.c; ++c) {
    const T* plane = image + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col + static_cast<std::size_t>((c * k + ky) * k + kx) * rows_stride + row0;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad_before_;
          T* row = dst + static_cast<std::size_t>(y) * w;
          if (sy < 0 || sy >= h) {
            std::fill(row, row + w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad_before_;
            row[x] = (sx >= 0 && sx < w) ? src[sx] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void Conv2d<T>::col2im(const T* col, int rows_stride, int row0, T* image) const {
  const int h = in_.h, w = in_.w, k = kernel_;
  for (int c = 0; c < in_.c; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col + static_cast<std::size_t>((c * k + ky) * k + kx) * rows_stride + row0;
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad_before_;
          if (sy < 0 || sy >= h) continue;
          const T* row = src + static_cast<std::size_t>(y) * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          for (int x = 0; x < w; ++x) {
            const int sx = x + kx - pad_before_;
            if (sx >= 0 && sx < w) dst[sx] += row[x];
          }
        }
      }
    }
  }
}

template <class T>
void Conv2d<T>::forward(const Matrix<T>& in, Matrix<T>& out, Mode, LayerCache<T>&) const {
  const int hw = in_.h * in_.w;
  const auto n = static_cast<int>(in.cols());
  const auto& kernel = this->params_[0].value;
  const auto& bias = this->params_[1].value;
  out.resize(static_cast<Eigen::Index>(out_c_) * hw, n);
  const int chunk = chunk_images();
  Matrix<T> col, result;
  for (int s = 0; s < n; s += chunk) {
    const int m = std::min(chunk, n - s);
    col.resize(static_cast<Eigen::Index>(m) * hw, patch());
    for (int i = 0; i < m; ++i) im2col(in.col(s + i).data(), col.data(), m * hw, i * hw);
    result.noalias() = col * kernel;
    for (int i = 0; i < m; ++i) {
      Eigen::Map<Matrix<T>> dst(out.col(s + i).data(), hw, out_c_);
      dst = result.middleRows(static_cast<Eigen::Index>(i) * hw, hw).rowwise() +
            bias.col(0).transpose();
      if (relu_) dst = dst.cwiseMax(T(0));
    }
  }
}

template <class T>
void Conv2d<T>::backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                         const LayerCache<T>&, Matrix<T>* grad_in) {
  const int hw = in_.h * in_.w;
  const auto n = static_cast<int>(in.cols());
  const auto& kernel = this->params_[0].value;
  auto& dkernel = this->params_[0].grad;
  auto& dbias = this->params_[1].grad;
  if (grad_in) grad_in->setZero(in.rows(), in.cols());
  const int chunk = chunk_images();
  Matrix<T> col, g, dcol;
  for (int s = 0; s < n; s += chunk) {
    const int m = std::min(chunk, n - s);
    col.resize(static_cast<Eigen::Index>(m) * hw, patch());
    g.resize(static_cast<Eigen::Index>(m) * hw, out_c_);
    for (int i = 0; i < m; ++i) {
      im2col(in.col(s + i).data(), col.data(), m * hw, i * hw);
      Eigen::Map<const Matrix<T>> go(grad_out.col(s + i).data(), hw, out_c_);
      auto block = g.middleRows(static_cast<Eigen::Index>(i) * hw, hw);
      if (relu_) {
        Eigen::Map<const Matrix<T>> o(out.col(s + i).data(), hw, out_c_);
        block = (o.array() > T(0)).select(go, T(0));
      } else {
        block = go;
      }
    }
    dkernel.noalias() += col.transpose() * g;
    dbias += g.colwise().sum().transpose();
    if (grad_in) {
      dcol.noalias() = g * kernel.transpose();
      for (int i = 0; i < m; ++i) col2im(dcol.data(), m * hw, i * hw, grad_in->col(s + i).data());
    }
  }
}

template <class T>
void Conv2d<T>::initialize(std::mt19937_64& rng) {
  const double fan_in = patch();
  fill_uniform(this->params_[0].value, std::sqrt((relu_ ? 6.0 : 3.0) / fan_in), rng);
  this->params_[1].value.setZero();
}

// ---------------------------------------------------------------- MaxPool2d

template <class T>
MaxPool2d<T>::MaxPool2d(std::string name, Shape in, int window)
    : name_(std::move(name)),
      in_(in),
      out_{in.c, (in.h + window - 1) / window, (in.w + window - 1) / window},
      window_(window) {}

template <class T>
void MaxPool2d<T>::forward(const Matrix<T>& in, Matrix<T>& out, Mode, LayerCache<T>&) const {
  out.resize(out_.size(), in.cols());
  for (Eigen::Index j = 0; j < in.cols(); ++j) {
    const T* src = in.col(j).data();
    T* dst = out.col(j).data();
    for (int c = 0; c < in_.c; ++c) {
      const T* plane = src + static_cast<std::size_t>(c) * in_.h * in_.w;
      for (int oy = 0; oy < out_.h; ++oy) {
        const int y1 = std::min(in_.h, (oy + 1) * window_);
        for (int ox = 0; ox < out_.w; ++ox) {
          const int x1 = std::min(in_.w, (ox + 1) * window_);
          T best = -std::numeric_limits<T>::infinity();
          for (int y = oy * window_; y < y1; ++y) {
            for (int x = ox * window_; x < x1; ++x) best = std::max(best, plane[y * in_.w + x]);
          }
          *dst++ = best;
        }
      }
    }
  }
}

template <class T>
void MaxPool2d<T>::backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                            const LayerCache<T>&, Matrix<T>* grad_in) {
  if (!grad_in) return;
  grad_in->setZero(in.rows(), in.cols());
  for (Eigen::Index j = 0; j < in.cols(); ++j) {
    const T* src = in.col(j).data();
    const T* o = out.col(j).data();
    const T* go = grad_out.col(j).data();
    T* gi = grad_in->col(j).data();
    for (int c = 0; c < in_.c; ++c) {
      const std::size_t base = static_cast<std::size_t>(c) * in_.h * in_.w;
      for (int oy = 0; oy < out_.h; ++oy) {
        const int y1 = std::min(in_.h, (oy + 1) * window_);
        for (int ox = 0; ox < out_.w; ++ox, ++o, ++go) {
          const int x1 = std::min(in_.w, (ox + 1) * window_);
          // Route to the first maximal element, matching forward's scan order.
          bool routed = false;
          for (int y = oy * window_; y < y1 && !routed; ++y) {
            for (int x = ox * window_; x < x1; ++x) {
              const std::size_t idx = base + static_cast<std::size_t>(y) * in_.w + x;
              if (src[idx] == *o) {
                gi[idx] += *go;
                routed = true;
                break;
              }
            }
          }
        }
      }
    }
  }
}

// ---------------------------------------------------------------- ChannelNorm

template <class T>
ChannelNorm<T>::ChannelNorm(std::string name, Shape in, double momentum, double epsilon)
    : name_(std::move(name)), in_(in), momentum_(momentum), epsilon_(epsilon) {
  this->params_.push_back(make_param<T>(name_ + ".gamma", in_.c, 1, true));
  this->params_.push_back(make_param<T>(name_ + ".beta", in_.c, 1, true));
  this->params_.push_back(make_param<T>(name_ + ".running_mean", in_.c, 1, false));
  this->params_.push_back(make_param<T>(name_ + ".running_var", in_.c, 1, false));
  this->params_[0].value.setOnes();
  this->params_[3].value.setOnes();
}

template <class T>
void ChannelNorm<T>::initialize(std::mt19937_64&) {
  this->params_[0].value.setOnes();
  this->params_[1].value.setZero();
  this->params_[2].value.setZero();
  this->params_[3].value.setOnes();
}

template <class T>
void ChannelNorm<T>::forward(const Matrix<T>& in, Matrix<T>& out, Mode mode,
                             LayerCache<T>& cache) const {
  const int hw = in_.h * in_.w;
  const auto n = in.cols();
  const auto& gamma = this->params_[0].value;
  const auto& beta = this->params_[1].value;
  cache.a.resize(in_.c);
  cache.b.resize(in_.c);
  for (int c = 0; c < in_.c; ++c) {
    if (mode == Mode::Train) {
      const auto block = in.middleRows(static_cast<Eigen::Index>(c) * hw, hw);
      const double m = static_cast<double>(block.size());
      const double mean = block.template cast<double>().sum() / m;
      const double var = (block.template cast<double>().array() - mean).square().sum() / m;
      cache.a(c) = static_cast<T>(mean);
      cache.b(c) = static_cast<T>(1.0 / std::sqrt(var + epsilon_));
    } else {
      cache.a(c) = this->params_[2].value(c);
      cache.b(c) = static_cast<T>(1.0 / std::sqrt(static_cast<double>(this->params_[3].value(c)) + epsilon_));
    }
  }
  out.resize(in.rows(), n);
  for (int c = 0; c < in_.c; ++c) {
    const T scale = gamma(c) * cache.b(c);
    const T shift = beta(c) - scale * cache.a(c);
    const auto rows = Eigen::seqN(static_cast<Eigen::Index>(c) * hw, hw);
    out(rows, Eigen::all) = (in(rows, Eigen::all).array() * scale + shift).matrix();
  }
}

template <class T>
void ChannelNorm<T>::backward(const Matrix<T>& in, const Matrix<T>&, const Matrix<T>& grad_out,
                              const LayerCache<T>& cache, Matrix<T>* grad_in) {
  const int hw = in_.h * in_.w;
  const auto& gamma = this->params_[0].value;
  auto& dgamma = this->params_[0].grad;
  auto& dbeta = this->params_[1].grad;
  if (grad_in) grad_in->resize(in.rows(), in.cols());
  for (int c = 0; c < in_.c; ++c) {
    const auto rows = Eigen::seqN(static_cast<Eigen::Index>(c) * hw, hw);
    const auto x = in(rows, Eigen::all).array();
    const auto dy = grad_out(rows, Eigen::all).array();
    const T mean = cache.a(c), inv_std = cache.b(c);
    const Matrix<T> xhat = ((x - mean) * inv_std).matrix();
    const T sum_dy = dy.sum();
    const T sum_dy_xhat = (dy * xhat.array()).sum();
    dgamma(c) += sum_dy_xhat;
    dbeta(c) += sum_dy;
    if (grad_in) {
      const T m = static_cast<T>(xhat.size());
      (*grad_in)(rows, Eigen::all) =
          ((dy * m - sum_dy - xhat.array() * sum_dy_xhat) * (gamma(c) * inv_std / m)).matrix();
    }
  }
}

template <class T>
void ChannelNorm<T>::commit(const LayerCache<T>& cache) {
  auto& running_mean = this->params_[2].value;
  auto& running_var = this->params_[3].value;
  const double m = momentum_;
  for (int c = 0; c < in_.c; ++c) {
    const double inv = cache.b(c);
    const double var = 1.0 / (inv * inv) - epsilon_;
    running_mean(c) = static_cast<T>(m * running_mean(c) + (1.0 - m) * cache.a(c));
    running_var(c) = static_cast<T>(m * running_var(c) + (1.0 - m) * std::max(var, 0.0));
  }
}

// ---------------------------------------------------------------- Dense

template <class T>
Dense<T>::Dense(std::string name, int in_features, int out_features, bool relu)
    : name_(std::move(name)), in_(in_features), out_(out_features), relu_(relu) {
  this->params_.push_back(make_param<T>(name_ + ".kernel", out_, in_, true));
  this->params_.push_back(make_param<T>(name_ + ".bias", out_, 1, true));
}

template <class T>
void Dense<T>::forward(const Matrix<T>& in, Matrix<T>& out, Mode, LayerCache<T>&) const {
  out.noalias() = this->params_[0].value * in;
  out.colwise() += this->params_[1].value.col(0);
  if (relu_) out = out.cwiseMax(T(0));
}

template <class T>
void Dense<T>::backward(const Matrix<T>& in, const Matrix<T>& out, const Matrix<T>& grad_out,
                        const LayerCache<T>&, Matrix<T>* grad_in) {
  Matrix<T> g = relu_ ? Matrix<T>((out.array() > T(0)).select(grad_out, T(0))) : grad_out;
  this->params_[0].grad.noalias() += g * in.transpose();
  this->params_[1].grad += g.rowwise().sum();
  if (grad_in) grad_in->noalias() = this->params_[0].value.transpose() * g;
}

template <class T>
void Dense<T>::initialize(std::mt19937_64& rng) {
  fill_uniform(this->params_[0].value, std::sqrt((relu_ ? 6.0 : 3.0) / in_), rng);
  this->params_[1].value.setZero();
}

// ---------------------------------------------------------------- Adam

template <class T>
void Adam<T>::step(const std::vector<Param<T>*>& params) {
  if (m_.empty()) {
    for (auto* p : params) {
      m_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step = static_cast<T>(lr_ * std::sqrt(c2) / c1);
  const T eps = static_cast<T>(eps_ * std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto* p = params[i];
    if (!p->trainable) continue;
    m_[i] = b1 * m_[i] + (T(1) - b1) * p->grad;
    v_[i] = b2 * v_[i] + (T(1) - b2) * p->grad.cwiseAbs2();
    p->value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
  }
}

template class Layer<float>;
template class Layer<double>;
template class Conv2d<float>;
template class Conv2d<double>;
template class MaxPool2d<float>;
template class MaxPool2d<double>;
template class ChannelNorm<float>;
template class ChannelNorm<double>;
template class Dense<float>;
template class Dense<double>;
template class Adam<float>;
template class Adam<double>;

}  // namespace reclab::nn
