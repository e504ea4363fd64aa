// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

namespace ticketlab {

using Token = std::uint32_t;
using TokenList = std::vector<Token>;

/// Shared token layout. Task symbols (sort letters, digits) start at kFirstSymbol.
namespace vocab {
inline constexpr Token kPad = 0;
inline constexpr Token kEos = 1;
inline constexpr Token kSep = 2;
inline constexpr Token kPlus = 3;
inline constexpr Token kMod = 4;
inline constexpr Token kFirstSymbol = 5;

inline constexpr Token symbol(std::uint32_t value) { return kFirstSymbol + value; }
}  // namespace vocab

}  // namespace ticketlab
