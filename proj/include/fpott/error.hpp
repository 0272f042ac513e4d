#pragma once

#include <stdexcept>
#include <string>

namespace fpott {

// Domain error with a stable short name ("MalformedRow", "ShapeMismatch", ...)
// that the CLI prints and tests match on.
class Error : public std::runtime_error {
 public:
  Error(std::string name, const std::string& detail)
      : std::runtime_error(name + ": " + detail), name_(std::move(name)) {}

  const std::string& name() const noexcept { return name_; }

 private:
  std::string name_;
};

}  // namespace fpott
