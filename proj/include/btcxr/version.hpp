#pragma once

namespace btcxr {
inline constexpr const char* kToolkitVersion = "0.1.0";
}
