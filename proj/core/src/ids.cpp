#include "reclab/ids.hpp"

#include <charconv>

#include "reclab/error.hpp"

namespace reclab {

char side_char(Side s) noexcept { return s == Side::X ? 'x' : 'y'; }

std::string UserId::str() const { return side_char(side) + std::to_string(index); }

UserId UserId::parse(std::string_view text) {
  if (text.size() < 2 || (text[0] != 'x' && text[0] != 'y')) {
    throw FormatError("malformed user id '" + std::string(text) + "'");
  }
  UserId id;
  id.side = text[0] == 'x' ? Side::X : Side::Y;
  const char* first = text.data() + 1;
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, id.index);
  if (ec != std::errc{} || ptr != last) {
    throw FormatError("malformed user id '" + std::string(text) + "'");
  }
  return id;
}

}  // namespace reclab
