#ifndef RFM_ERRORS_HPP_
#define RFM_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace rfm {

// Non-finite or malformed input.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input outside the domain where the operation is defined (cut locus, t >= 1, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A numerical procedure did not deliver a trustworthy result.
class NumericFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace rfm

#endif  // RFM_ERRORS_HPP_
