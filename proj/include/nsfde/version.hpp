#pragma once

namespace nsfde {

inline constexpr const char* version = "0.1.0";

}  // namespace nsfde
