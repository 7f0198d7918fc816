#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace salience {

enum class ErrorKind {
  ChannelAllInvalid,
  ShapeMismatch,
  EmptyInput,
  MissingStats,
  InvalidGeometry,
  MissingFile,
  FormatError,
  InvalidConfig,
  UnknownUser,
  SingleUserDataset,
  GeometryError,
  UnlabeledSample,
  MissingSourceLabels,
  NonFiniteLoss,
  UnknownVariant,
  LengthMismatch,
  IndexOutOfRange,
  VariantWithoutAttention,
  IOError,
  PreconditionViolated,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so that callers (the CLI,
/// tests) can branch on the category without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace salience
