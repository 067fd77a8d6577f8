#pragma once

#include <stdexcept>
#include <string>

namespace fedmil {

enum class ErrorCode {
  config,            // invalid configuration value
  missing_file,      // file not found / not readable
  magic_mismatch,    // container magic bytes wrong
  version_mismatch,  // container version unsupported
  truncated,         // payload ends mid-record
  length_mismatch,   // trailing bytes / count disagrees with header
  checksum_mismatch, // payload checksum wrong
  count_mismatch,    // image/label counts disagree
  unsupported,       // operation not defined for this input (e.g. >2 classes)
  infeasible,        // demands cannot be met (pool exhausted, rank < k)
  degenerate,        // degenerate numerical situation (clustering, similarity)
  shape_mismatch,    // tensor/bag dimensions disagree
  numeric,           // NaN/Inf or non-convergence
};

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

} // namespace fedmil
