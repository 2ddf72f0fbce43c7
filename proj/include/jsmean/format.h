#pragma once

#include <string>

namespace jsmean {

// 17 significant digits, enough for any double to round-trip.
std::string format_double(double v);

}  // namespace jsmean
