#include "bgcut/error.hpp"

namespace bgcut {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::invalid_argument: return "invalid_argument";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::numeric: return "numeric";
    case Errc::io: return "io";
    case Errc::bad_magic: return "bad_magic";
    case Errc::bad_version: return "bad_version";
    case Errc::truncated: return "truncated";
    case Errc::bad_checksum: return "bad_checksum";
    case Errc::stale_feature: return "stale_feature";
    case Errc::empty_input: return "empty_input";
  }
  return "unknown";
}

void fail(Errc code, const std::string& msg) {
  throw Error(code, std::string(errc_name(code)) + ": " + msg);
}

}  // namespace bgcut
