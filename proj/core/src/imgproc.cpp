#include "reclab/imgproc.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "reclab/error.hpp"

namespace reclab {

ImageTensor crop_and_scale(const RgbImage& image, const BBox& box) {
  if (!(box.w > 0.0) || !(box.h > 0.0)) throw DegenerateBbox("face bbox has zero area");
  constexpr double kSlack = 1e-9;
  if (box.x < -kSlack || box.y < -kSlack || box.x + box.w > image.width + kSlack ||
      box.y + box.h > image.height + kSlack) {
    throw std::out_of_range("face bbox is outside the image");
  }
  const double side = std::max(box.w, box.h);
  const double x0 = box.x + 0.5 * box.w - 0.5 * side;
  const double y0 = box.y + 0.5 * box.h - 0.5 * side;
  const double step = side / kImageSide;

  struct Tap {
    int lo, hi;
    float frac;
  };
  const auto taps = [&](double origin, int extent) {
    std::array<Tap, kImageSide> out{};
    for (int i = 0; i < kImageSide; ++i) {
      const double src = std::clamp(origin + (i + 0.5) * step - 0.5, 0.0, extent - 1.0);
      const int lo = static_cast<int>(std::floor(src));
      out[i] = {lo, std::min(lo + 1, extent - 1), static_cast<float>(src - lo)};
    }
    return out;
  };
  const auto xs = taps(x0, image.width);
  const auto ys = taps(y0, image.height);

  ImageTensor tensor;
  for (int c = 0; c < kImageChannels; ++c) {
    for (int i = 0; i < kImageSide; ++i) {
      const auto& ty = ys[i];
      for (int j = 0; j < kImageSide; ++j) {
        const auto& tx = xs[j];
        const float top = image.at(ty.lo, tx.lo, c) * (1.0f - tx.frac) + image.at(ty.lo, tx.hi, c) * tx.frac;
        const float bottom = image.at(ty.hi, tx.lo, c) * (1.0f - tx.frac) + image.at(ty.hi, tx.hi, c) * tx.frac;
        tensor.at(c, i, j) = std::clamp(top * (1.0f - ty.frac) + bottom * ty.frac, 0.0f, 1.0f);
      }
    }
  }
  return tensor;
}

PaddedSequence pad_and_mask(std::span<const Vec128> vectors, std::size_t length) {
  if (vectors.size() > length) {
    throw SequenceTooLong("history of " + std::to_string(vectors.size()) +
                          " steps exceeds sequence length " + std::to_string(length));
  }
  PaddedSequence seq;
  const std::size_t pad = length - vectors.size();
  seq.steps.assign(pad, Vec128{});
  seq.steps.insert(seq.steps.end(), vectors.begin(), vectors.end());
  seq.mask.assign(length, false);
  std::fill(seq.mask.begin() + static_cast<std::ptrdiff_t>(pad), seq.mask.end(), true);
  return seq;
}

}  // namespace reclab
