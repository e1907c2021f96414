#pragma once

#include <stdexcept>
#include <string>

namespace dpreg {

/// Raised when a solve or a search cannot produce a finite, trustworthy answer.
/// The CLI maps it to exit code 2; std::invalid_argument maps to exit code 1.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input files (CSV, JSON) with the offending location in the message.
class ParseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dpreg
