#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace demix {

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Lower-case, zero-padded 16-digit hex rendering of a 64-bit value.
std::string hex64(std::uint64_t value);

}  // namespace demix
