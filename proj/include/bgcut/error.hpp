#pragma once

#include <stdexcept>
#include <string>

namespace bgcut {

// Failure categories. The CLI maps these to process exit codes, so the
// numeric values are part of the external interface and must stay stable.
enum class Errc : int {
  invalid_argument = 2,
  shape_mismatch = 3,
  numeric = 4,
  io = 5,
  bad_magic = 6,
  bad_version = 7,
  truncated = 8,
  bad_checksum = 9,
  stale_feature = 10,
  empty_input = 11,
};

const char* errc_name(Errc c);

class Error final : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  Errc code() const { return code_; }
  int exit_code() const { return static_cast<int>(code_); }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& msg);

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

}  // namespace bgcut
