#pragma once

#include <stdexcept>
#include <string>

namespace jsmean {

// Malformed arguments: bad dimensions, non-finite entries, asymmetric input, parse failures.
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

class NotPositiveDefinite : public std::domain_error {
 public:
  explicit NotPositiveDefinite(const std::string& what) : std::domain_error(what) {}
};

// A theorem hypothesis (the rank condition q*min(nq,p) > 2) does not hold.
class PreconditionError : public std::domain_error {
 public:
  explicit PreconditionError(const std::string& what) : std::domain_error(what) {}
};

}  // namespace jsmean
