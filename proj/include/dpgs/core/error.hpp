#pragma once

#include <stdexcept>
#include <string>

namespace dpgs {

/// Thrown for violated preconditions on shapes, factors and ranges.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A loss, gradient or parameter became non-finite.
class DivergedError : public std::runtime_error {
 public:
  explicit DivergedError(const std::string& what, std::string context = {})
      : std::runtime_error(context.empty() ? what : what + " [" + context + "]"),
        context_(std::move(context)) {}

  const std::string& context() const noexcept { return context_; }

 private:
  std::string context_;
};

class GenerationFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace dpgs
