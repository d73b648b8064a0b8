#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dadpc {

enum class ErrorCode {
  SequenceTooShort,
  NoUsableSegment,
  InvalidRecord,
  DimensionMismatch,
  SingularKKT,
  NonSymmetricP,
  InsufficientData,
  EmptyTable,
  NonFiniteResidual,
  SigmaOutOfRange,
  ScheduleGap,
  NonFiniteOutput,
  NonFiniteState,
  CsvExhausted,
  MalformedLog,
  ConfigError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::SequenceTooShort: return "SequenceTooShort";
    case ErrorCode::NoUsableSegment: return "NoUsableSegment";
    case ErrorCode::InvalidRecord: return "InvalidRecord";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SingularKKT: return "SingularKKT";
    case ErrorCode::NonSymmetricP: return "NonSymmetricP";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::EmptyTable: return "EmptyTable";
    case ErrorCode::NonFiniteResidual: return "NonFiniteResidual";
    case ErrorCode::SigmaOutOfRange: return "SigmaOutOfRange";
    case ErrorCode::ScheduleGap: return "ScheduleGap";
    case ErrorCode::NonFiniteOutput: return "NonFiniteOutput";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::CsvExhausted: return "CsvExhausted";
    case ErrorCode::MalformedLog: return "MalformedLog";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; the code identifies the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

// Warning sink. Defaults to stderr; tests and the CLI may redirect it.
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view msg) {
    std::clog << "[dadpc warning] " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view msg) {
  if (auto& s = warning_sink()) s(msg);
}

}  // namespace dadpc
