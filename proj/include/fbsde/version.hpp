#pragma once

namespace fbsde {
inline constexpr const char* kVersion = "0.1.0";
}
