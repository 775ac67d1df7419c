#pragma once

#include <stdexcept>
#include <string>

namespace layoutlab {

inline void check_arg(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace layoutlab
