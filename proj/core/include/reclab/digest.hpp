#pragma once

#include <span>
#include <string>
#include <string_view>

#include "reclab/events.hpp"

namespace reclab {

/// Lower-case hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

/// Digest of the serialized event set, independent of input order.
std::string event_set_digest(std::span<const PreferenceEvent> events);

}  // namespace reclab
