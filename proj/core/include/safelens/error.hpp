#pragma once

#include <stdexcept>
#include <string>

namespace safelens {

// Base for everything the library throws; the CLI reports these uniformly.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };   // shape/size mismatch
struct ContractError : Error { using Error::Error; };    // API precondition violated
struct DomainError : Error { using Error::Error; };      // numeric domain (log<=0, NaN/Inf)
struct FormatError : Error { using Error::Error; };      // file parsing / serialization
struct CapabilityError : Error { using Error::Error; };  // layer kind unsupported here
struct TrainingError : Error { using Error::Error; };    // optimization diverged
struct ConfigError : Error { using Error::Error; };      // run-config validation
struct ReportError : Error { using Error::Error; };      // report assembly

}  // namespace safelens
