#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "reclab/history.hpp"
#include "reclab/image.hpp"

namespace reclab {

inline constexpr int kImageSide = 100;
inline constexpr int kImageChannels = 3;
inline constexpr std::size_t kImageValues =
    static_cast<std::size_t>(kImageSide) * kImageSide * kImageChannels;
inline constexpr std::size_t kEmbeddingDim = 128;

using Vec128 = std::array<double, kEmbeddingDim>;

/// Encoder-ready 100x100x3 tensor, planar (channel-major) RGB in [0,1].
struct ImageTensor {
  std::vector<float> values = std::vector<float>(kImageValues, 0.0f);

  float& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * kImageSide + y) * kImageSide + x]; }
  float at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * kImageSide + y) * kImageSide + x];
  }
  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Expands the box to a square about its centre, crops and resamples bilinearly
/// to 100x100. Samples outside the image replicate the border.
/// Throws DegenerateBbox for zero area, std::out_of_range if the box leaves the image.
ImageTensor crop_and_scale(const RgbImage& image, const BBox& face_bbox);

/// Fixed-length history input: leading zero steps for padding, mask false there.
struct PaddedSequence {
  std::vector<Vec128> steps;
  std::vector<bool> mask;

  std::size_t length() const noexcept { return steps.size(); }
};

/// Prepends zero steps so the result has `length` steps; the real vectors keep their
/// order and end at the last position. Throws SequenceTooLong if vectors.size() > length.
PaddedSequence pad_and_mask(std::span<const Vec128> vectors, std::size_t length = kHistoryCap);

}  // namespace reclab
