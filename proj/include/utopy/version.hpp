#pragma once

#include <string>

#define UTOPY_VERSION "0.1.0"

namespace utopy {

/// Library version, with the source revision when the build provides one.
inline std::string code_version() {
#ifdef UTOPY_GIT_REV
    return std::string(UTOPY_VERSION) + "+" + UTOPY_GIT_REV;
#else
    return UTOPY_VERSION;
#endif
}

} // namespace utopy
