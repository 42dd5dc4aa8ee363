#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "puppetchat/protocol.hpp"

namespace puppetchat {

/// One line of a scripted dyad session, e.g.
///   B recommend text "I love you" @r1
///   B assert @r1 contains catch-heart
struct ScriptStep {
  int line = 0;
  std::string actor;  // "A" or "B"
  std::string verb;
  std::vector<std::string> args;
  std::optional<std::string> label;  // without the '@'
  std::string source;
};

struct Script {
  std::uint64_t seed = 0;
  std::map<std::string, std::string> actors{{"A", "alice"}, {"B", "bob"}};
  std::optional<std::int64_t> ttl_ms;
  std::vector<ScriptStep> steps;
};

/// Throws Error(invalid_argument) naming the offending line.
Script parse_script(std::string_view text);

struct ScriptReport {
  bool passed = true;
  std::size_t steps_run = 0;
  std::vector<std::string> failures;
};

/// Starts an in-process server on a loopback port with the offline provider,
/// connects both actors over the socket and runs the steps in order. A
/// failed assert is recorded and the run continues; a step the server
/// rejects stops the run.
ScriptReport run_script(const Script& script, ServiceConfig config, std::ostream& log);

}  // namespace puppetchat
