#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace metagame {

/// Broad failure category. The CLI prints it as a machine-readable tag.
enum class ErrorKind {
  kInvalidConfig,
  kInvalidArgument,
  kIllegalAction,
  kInadmissible,
  kDimension,
  kNumeric,
  kSchema,
  kIo,
  kVersion,
  kUsage,
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace metagame
