#include "salience/error.hpp"

namespace salience {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ChannelAllInvalid: return "ChannelAllInvalid";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::MissingStats: return "MissingStats";
    case ErrorKind::InvalidGeometry: return "InvalidGeometry";
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::UnknownUser: return "UnknownUser";
    case ErrorKind::SingleUserDataset: return "SingleUserDataset";
    case ErrorKind::GeometryError: return "GeometryError";
    case ErrorKind::UnlabeledSample: return "UnlabeledSample";
    case ErrorKind::MissingSourceLabels: return "MissingSourceLabels";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::UnknownVariant: return "UnknownVariant";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::VariantWithoutAttention: return "VariantWithoutAttention";
    case ErrorKind::IOError: return "IOError";
    case ErrorKind::PreconditionViolated: return "PreconditionViolated";
  }
  return "Unknown";
}

}  // namespace salience
