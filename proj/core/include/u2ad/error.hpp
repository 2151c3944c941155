#pragma once

#include <stdexcept>
#include <string>

namespace u2ad {

// Exit-code families used by the command line tool: configuration problems
// map to 1, data problems to 2 and everything that fails at runtime to 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class RuntimeFailure : public Error {
 public:
  using Error::Error;
};

}  // namespace u2ad
