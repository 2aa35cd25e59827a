#pragma once

#include <cstdint>

namespace stegattn::detail {

void add_logit_clamps(std::uint64_t n);

}  // namespace stegattn::detail
