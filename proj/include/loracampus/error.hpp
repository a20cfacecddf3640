#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace loracampus {

// Every failure raised by the library carries one of these codes so callers
// (and the CLI exit-code mapping) can branch without parsing messages.
enum class Errc {
  MalformedTimestamp,
  InvalidCalendar,
  InvalidDeviceId,
  AmbiguousKind,
  OutOfRange,
  MissingHeader,
  IoError,
  SeriesTooShort,
  InvalidConfig,
  EmptyInput,
  MixedDevices,
  NonMonotonicTime,
  InsufficientSupport,
  MissingCompanions,
  DegenerateDesign,
  DimMismatch,
  EmptySequence,
  NonFiniteLoss,
  ShapeMismatch,
  LengthMismatch,
  UnknownLabel,
  EmptyMatrix,
  EmptyClass,
  RatioInvalid,
  ConfigInvalid,
  UnknownSubcommand,
  FormatError,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedTimestamp: return "MalformedTimestamp";
    case Errc::InvalidCalendar: return "InvalidCalendar";
    case Errc::InvalidDeviceId: return "InvalidDeviceId";
    case Errc::AmbiguousKind: return "AmbiguousKind";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::MissingHeader: return "MissingHeader";
    case Errc::IoError: return "IoError";
    case Errc::SeriesTooShort: return "SeriesTooShort";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::MixedDevices: return "MixedDevices";
    case Errc::NonMonotonicTime: return "NonMonotonicTime";
    case Errc::InsufficientSupport: return "InsufficientSupport";
    case Errc::MissingCompanions: return "MissingCompanions";
    case Errc::DegenerateDesign: return "DegenerateDesign";
    case Errc::DimMismatch: return "DimMismatch";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::UnknownLabel: return "UnknownLabel";
    case Errc::EmptyMatrix: return "EmptyMatrix";
    case Errc::EmptyClass: return "EmptyClass";
    case Errc::RatioInvalid: return "RatioInvalid";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::UnknownSubcommand: return "UnknownSubcommand";
    case Errc::FormatError: return "FormatError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace loracampus
