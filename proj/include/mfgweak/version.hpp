#pragma once

namespace mfgw {

inline constexpr const char* kVersion = "0.1.0";

} // namespace mfgw
