#ifndef SEMBID_ERRORS_HPP_
#define SEMBID_ERRORS_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sembid {

// Invalid or inconsistent configuration (unknown preset, bad dimensions, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Operation invoked in the wrong lifecycle state (step after done, ...).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed binary or text input. Carries the byte offset of the failure.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) +
                           ")"),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Artifacts that parse but disagree with each other (schema drift, checksums).
class DataIntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Strict embedding cache miss.
class LookupError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sembid

#endif  // SEMBID_ERRORS_HPP_
