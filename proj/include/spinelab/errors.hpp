#ifndef SPINELAB_ERRORS_HPP
#define SPINELAB_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace spinelab {

/// Failure categories surfaced to callers and mapped onto CLI exit codes.
enum class ErrorCode {
  ConfigInvalid,
  PopulationExplosion,
  NonConverged,
  BracketFailure,
  OutOfDomain,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigInvalid: return "CONFIG_INVALID";
    case ErrorCode::PopulationExplosion: return "POPULATION_EXPLOSION";
    case ErrorCode::NonConverged: return "NONCONVERGED";
    case ErrorCode::BracketFailure: return "BRACKET_FAILURE";
    case ErrorCode::OutOfDomain: return "OUT_OF_DOMAIN";
  }
  return "UNKNOWN";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code), message_(what) {}

  ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, const std::string& invariant) {
  if (!ok) fail(ErrorCode::ConfigInvalid, invariant);
}

}  // namespace spinelab

#endif  // SPINELAB_ERRORS_HPP
