#include "reclab/image_source.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "reclab/error.hpp"
#include "reclab/synth.hpp"

namespace reclab {

std::string image_file_name(const ImageRef& ref) {
  return ref.user.str() + "_" + std::to_string(ref.variant) + ".png";
}

ImageTensor RenderedImageProvider::tensor(const ImageRef& ref) const {
  const auto& p = world_->params();
  const std::uint32_t n = ref.user.side == Side::X ? p.n_x : p.n_y;
  if (ref.user.index >= n || ref.variant >= p.n_variants) {
    throw MissingImage("no photo " + image_file_name(ref));
  }
  const auto img = world_->render_face(ref.user, SyntheticWorld::photo_seed(ref.user, ref.variant));
  return crop_and_scale(img.pixels, img.face_bbox);
}

std::uint32_t RenderedImageProvider::variants_per_user() const {
  return world_->params().n_variants;
}

PngDirectoryProvider::PngDirectoryProvider(std::string directory) : dir_(std::move(directory)) {
  const auto index = std::filesystem::path(dir_) / "faces.tsv";
  std::ifstream in(index);
  if (!in) throw IoFailure("cannot open " + index.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string user;
    ImageRef ref;
    BBox box;
    if (!(fields >> user >> ref.variant >> box.x >> box.y >> box.w >> box.h)) {
      throw FormatError("malformed line in " + index.string());
    }
    ref.user = UserId::parse(user);
    variants_ = std::max(variants_, ref.variant + 1);
    boxes_[ref] = box;
  }
}

ImageTensor PngDirectoryProvider::tensor(const ImageRef& ref) const {
  auto it = boxes_.find(ref);
  if (it == boxes_.end()) throw MissingImage("no photo " + image_file_name(ref));
  const auto path = (std::filesystem::path(dir_) / image_file_name(ref)).string();
  if (!std::filesystem::exists(path)) throw MissingImage("missing file " + path);
  return crop_and_scale(read_png(path), it->second);
}

ImageTensor CachingImageProvider::tensor(const ImageRef& ref) const {
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(ref); it != cache_.end()) return *it->second;
  }
  auto value = std::make_shared<const ImageTensor>(inner_->tensor(ref));
  std::lock_guard lock(mu_);
  if (cache_.size() < max_entries_) cache_.emplace(ref, value);
  return *value;
}

}  // namespace reclab
