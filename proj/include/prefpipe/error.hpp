#pragma once

#include <stdexcept>
#include <string>

namespace prefpipe {

// Domain error. The CLI maps these to exit code 1 with a one-line JSON
// message on stderr; anything else escaping main is a bug.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Raised by langid when a text is empty after whitespace trimming.
// Curation treats this verdict as "not the target language".
class IndeterminateText : public Error {
public:
  explicit IndeterminateText(const std::string& msg) : Error(msg) {}
};

}  // namespace prefpipe
