#pragma once

namespace mimic {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mimic
