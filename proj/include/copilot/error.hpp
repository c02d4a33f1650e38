#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace copilot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Read/write failure. `offset` is the byte offset into the stream and
// `line` the 1-based line number when known (0 otherwise).
class IoError : public Error {
 public:
  IoError(const std::string& what, std::uint64_t offset, std::uint64_t line = 0)
      : Error(what + " (offset " + std::to_string(offset) +
              (line ? ", line " + std::to_string(line) : std::string()) + ")"),
        offset_(offset),
        line_(line) {}

  std::uint64_t offset() const noexcept { return offset_; }
  std::uint64_t line() const noexcept { return line_; }

 private:
  std::uint64_t offset_;
  std::uint64_t line_;
};

}  // namespace copilot
