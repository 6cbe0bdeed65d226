#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace oracle {

/// Largest relative deviation per update name for one random instance.
/// Each closed-form update is compared with a numerical maximizer of its Q-function.
using DeviationTable = std::map<std::string, double>;

DeviationTable check_factor_updates(std::uint64_t seed);
DeviationTable check_spatiotemporal_updates(std::uint64_t seed);

}  // namespace oracle
