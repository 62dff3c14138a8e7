#pragma once

#include <stdexcept>
#include <string>

namespace persbev {

// Malformed user-facing configuration (bad config file, inconsistent grid
// parameters). The CLI maps this to exit code 1; every other exception maps
// to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace persbev
