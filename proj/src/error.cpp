#include "puppetchat/error.hpp"

namespace puppetchat {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::invalid_library: return "invalid_library";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::unauthorized: return "unauthorized";
    case ErrorCode::ephemeral_record: return "ephemeral_record";
    case ErrorCode::provider_unavailable: return "provider_unavailable";
    case ErrorCode::configuration: return "configuration";
    case ErrorCode::storage: return "storage";
    case ErrorCode::schema: return "schema";
    case ErrorCode::network: return "network";
  }
  return "unknown";
}

}  // namespace puppetchat
