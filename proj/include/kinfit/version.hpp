#ifndef KINFIT_VERSION_HPP
#define KINFIT_VERSION_HPP

namespace kinfit {

inline constexpr const char* kVersion = "0.1.0";

}

#endif
