#pragma once

#include <stdexcept>
#include <string>

namespace agra {

// Error taxonomy shared by the library and the CLI. The CLI maps
// ConfigError / ValidationError / ParseError to exit code 1 (usage or
// input problems) and everything else to exit code 2 (runtime failures).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad configuration: unknown key, out-of-range value, unknown backbone id.
struct ConfigError : Error {
  using Error::Error;
};

// Structurally invalid data: shape mismatch, bad landmark coordinates,
// checkpoint incompatible with the configured architecture.
struct ValidationError : Error {
  using Error::Error;
};

// Malformed input files (manifests, config files). Messages carry the
// offending line where applicable.
struct ParseError : Error {
  using Error::Error;
};

// Operation invoked in the wrong order, e.g. querying an unpopulated
// distribution bank or starting stage-2 without a stage-1 checkpoint.
struct StateError : Error {
  using Error::Error;
};

// Protocol violation: code under audit touched data it must not see
// (target ground-truth labels during adaptation).
struct AuditError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace agra
