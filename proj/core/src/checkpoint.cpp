#include "reclab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "reclab/digest.hpp"
#include "reclab/error.hpp"

namespace reclab {

namespace {

constexpr std::string_view kMagic = "RECLABCK";

static_assert(std::endian::native == std::endian::little, "checkpoint format is little-endian");

template <class T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

void put_string(std::string& out, std::string_view s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string() { return std::string(take(get<std::uint32_t>())); }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError("truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::add(std::string name, std::vector<std::int64_t> shape,
                     std::span<const float> values) {
  TensorRecord r{std::move(name), std::move(shape), DType::F32,
                 std::vector<double>(values.begin(), values.end())};
  tensors_.push_back(std::move(r));
}

void Checkpoint::add(std::string name, std::vector<std::int64_t> shape,
                     std::span<const double> values) {
  TensorRecord r{std::move(name), std::move(shape), DType::F64,
                 std::vector<double>(values.begin(), values.end())};
  tensors_.push_back(std::move(r));
}

bool Checkpoint::contains(std::string_view name) const noexcept {
  for (const auto& t : tensors_) {
    if (t.name == name) return true;
  }
  return false;
}

const TensorRecord& Checkpoint::tensor(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw FormatError("checkpoint '" + kind_ + "' has no tensor '" + std::string(name) + "'");
}

std::string Checkpoint::serialize() const {
  std::string out(kMagic);
  put<std::uint32_t>(out, kVersion);
  put_string(out, kind_);
  const std::string meta = metadata_.dump();
  put<std::uint64_t>(out, meta.size());
  out.append(meta);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors_.size()));
  for (const auto& t : tensors_) {
    put_string(out, t.name);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put<std::int64_t>(out, d);
    put<std::uint64_t>(out, t.values.size());
    for (double v : t.values) {
      if (t.dtype == DType::F32) {
        put<float>(out, static_cast<float>(v));
      } else {
        put<double>(out, v);
      }
    }
  }
  return out;
}

Checkpoint Checkpoint::deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(kMagic.size()) != kMagic) throw FormatError("not a reclab checkpoint");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck(in.get_string());
  const auto meta_len = in.get<std::uint64_t>();
  ck.metadata_ = nlohmann::json::parse(in.take(meta_len));
  const auto n = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    TensorRecord t;
    t.name = in.get_string();
    const auto dtype = in.get<std::uint8_t>();
    if (dtype != static_cast<std::uint8_t>(DType::F32) &&
        dtype != static_cast<std::uint8_t>(DType::F64)) {
      throw FormatError("bad dtype in checkpoint tensor '" + t.name + "'");
    }
    t.dtype = static_cast<DType>(dtype);
    t.shape.resize(in.get<std::uint32_t>());
    std::int64_t expect = 1;
    for (auto& d : t.shape) {
      d = in.get<std::int64_t>();
      expect *= d;
    }
    const auto count = in.get<std::uint64_t>();
    if (static_cast<std::int64_t>(count) != expect) {
      throw FormatError("shape/size mismatch in checkpoint tensor '" + t.name + "'");
    }
    t.values.resize(count);
    for (auto& v : t.values) v = t.dtype == DType::F32 ? in.get<float>() : in.get<double>();
    ck.tensors_.push_back(std::move(t));
  }
  if (!in.done()) throw FormatError("trailing bytes in checkpoint");
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoFailure("cannot open " + path + " for writing");
  const auto bytes = serialize();
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoFailure("write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoFailure("cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string Checkpoint::digest() const { return sha256_hex(serialize()); }

void Checkpoint::expect_kind(std::string_view expected) const {
  if (kind_ != expected) {
    throw FormatError("expected a '" + std::string(expected) + "' checkpoint, got '" + kind_ + "'");
  }
}

}  // namespace reclab
