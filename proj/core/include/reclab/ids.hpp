#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>

namespace reclab {

/// The two bipartite user sets. Every expression goes from one side to the other.
enum class Side : std::uint8_t { X = 0, Y = 1 };

constexpr Side opposite(Side s) noexcept { return s == Side::X ? Side::Y : Side::X; }
constexpr int side_index(Side s) noexcept { return static_cast<int>(s); }
char side_char(Side s) noexcept;

/// A user is identified by its side and an index within that side.
/// Textual form is "x17" / "y4".
struct UserId {
  Side side = Side::X;
  std::uint32_t index = 0;

  friend auto operator<=>(const UserId&, const UserId&) = default;

  std::string str() const;
  static UserId parse(std::string_view text);
};

}  // namespace reclab

template <>
struct std::hash<reclab::UserId> {
  std::size_t operator()(const reclab::UserId& u) const noexcept {
    return std::hash<std::uint64_t>{}((static_cast<std::uint64_t>(u.side) << 32) | u.index);
  }
};
