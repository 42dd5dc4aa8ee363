#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace puppetchat {

enum class ErrorCode {
  invalid_argument,
  invalid_library,
  not_found,
  unauthorized,
  ephemeral_record,
  provider_unavailable,
  configuration,
  storage,
  schema,
  network,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every failure surfaced by the service.
///
/// `subject()` carries the offending identifier (action id, record id, ...)
/// when one exists, so callers can report it without parsing the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string message, std::string subject = {})
      : std::runtime_error(std::move(message)), code_(code), subject_(std::move(subject)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  ErrorCode code_;
  std::string subject_;
};

}  // namespace puppetchat
