#pragma once

#include <stdexcept>
#include <string>

namespace varexp {

/// Raised on violated preconditions and unusable input. The message names
/// the offending quantity.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw Error(message);
}

}  // namespace varexp
