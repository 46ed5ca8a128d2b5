#pragma once

#include <cstdio>
#include <stdexcept>
#include <string>

namespace arcgen {

// Exit codes used by the CLI. Library errors carry the code they map to.
enum class ErrorCode : int {
  config = 2,
  missing_artifact = 3,
  numerical = 4,
  invalid_input = 2,
  io = 3,
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }
  int exit_code() const { return static_cast<int>(code_); }

private:
  ErrorCode code_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCode::config, w) {}
};
struct InvalidSpecError : Error {
  explicit InvalidSpecError(const std::string& w)
      : Error(ErrorCode::invalid_input, w) {}
};
struct MissingArtifactError : Error {
  explicit MissingArtifactError(const std::string& w)
      : Error(ErrorCode::missing_artifact, w) {}
};
struct NumericalError : Error {
  explicit NumericalError(const std::string& w)
      : Error(ErrorCode::numerical, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::io, w) {}
};

inline void log_warn(const std::string& msg) {
  std::fprintf(stderr, "[warn] %s\n", msg.c_str());
}
inline void log_info(const std::string& msg) {
  std::fprintf(stderr, "[info] %s\n", msg.c_str());
}

}  // namespace arcgen
