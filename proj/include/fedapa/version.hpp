#pragma once

namespace fedapa {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace fedapa
