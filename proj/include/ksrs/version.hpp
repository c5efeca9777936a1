#pragma once

namespace ksrs {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace ksrs
