#ifndef AFL_ERRORS_H_
#define AFL_ERRORS_H_

#include <stdexcept>
#include <string>

namespace afl {

// Violated precondition or postcondition of a public operation.
class ContractError : public std::logic_error {
 public:
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

// Incompatible operand shapes while building a graph node.
class ShapeError : public ContractError {
 public:
  explicit ShapeError(const std::string& what) : ContractError(what) {}
};

// A numerical oracle could not produce a trustworthy reference value.
class OracleError : public std::runtime_error {
 public:
  explicit OracleError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed file, unreadable path, bad config key.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Training diverged (non-finite loss).
class TrainingError : public std::runtime_error {
 public:
  explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace afl

#endif  // AFL_ERRORS_H_
