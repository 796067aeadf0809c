#pragma once

#include <cstdint>
#include <vector>

namespace codecipher {

using TokenId = std::uint32_t;
using TokenSeq = std::vector<TokenId>;

}  // namespace codecipher
