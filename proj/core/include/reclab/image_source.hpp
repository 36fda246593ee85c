#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "reclab/ids.hpp"
#include "reclab/imgproc.hpp"

namespace reclab {

class SyntheticWorld;

/// Reference to one stored photo of a user.
struct ImageRef {
  UserId user;
  std::uint32_t variant = 0;

  friend auto operator<=>(const ImageRef&, const ImageRef&) = default;
};

/// Supplies preprocessed (cropped, scaled) encoder inputs.
class ImageProvider {
 public:
  virtual ~ImageProvider() = default;
  /// Throws MissingImage when the photo does not exist.
  virtual ImageTensor tensor(const ImageRef& ref) const = 0;
  virtual std::uint32_t variants_per_user() const = 0;
};

/// Renders photos on demand from a synthetic world.
class RenderedImageProvider final : public ImageProvider {
 public:
  explicit RenderedImageProvider(const SyntheticWorld& world) : world_(&world) {}
  ImageTensor tensor(const ImageRef& ref) const override;
  std::uint32_t variants_per_user() const override;

 private:
  const SyntheticWorld* world_;
};

/// Reads <dir>/<user>_<variant>.png and the face boxes listed in <dir>/faces.tsv.
class PngDirectoryProvider final : public ImageProvider {
 public:
  explicit PngDirectoryProvider(std::string directory);
  ImageTensor tensor(const ImageRef& ref) const override;
  std::uint32_t variants_per_user() const override { return variants_; }

 private:
  std::string dir_;
  std::map<ImageRef, BBox> boxes_;
  std::uint32_t variants_ = 0;
};

/// Memoizes another provider; thread-safe.
class CachingImageProvider final : public ImageProvider {
 public:
  explicit CachingImageProvider(const ImageProvider& inner, std::size_t max_entries = 4096)
      : inner_(&inner), max_entries_(max_entries) {}
  ImageTensor tensor(const ImageRef& ref) const override;
  std::uint32_t variants_per_user() const override { return inner_->variants_per_user(); }

 private:
  const ImageProvider* inner_;
  std::size_t max_entries_;
  mutable std::mutex mu_;
  mutable std::map<ImageRef, std::shared_ptr<const ImageTensor>> cache_;
};

std::string image_file_name(const ImageRef& ref);

}  // namespace reclab
