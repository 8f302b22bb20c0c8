#pragma once

#include <stdexcept>
#include <string>

namespace cac {

/// Broad failure classes. The CLI maps these onto exit codes.
enum class ErrorCategory {
  usage,       // bad arguments or preconditions on caller-supplied data
  validation,  // configuration, ingestion or schema problems
  runtime,     // numeric failures, I/O during processing
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, std::string kind, const std::string& what)
      : std::runtime_error(what), category_(category), kind_(std::move(kind)) {}

  ErrorCategory category() const noexcept { return category_; }
  /// Short machine-readable tag, e.g. "shape" or "ingestion".
  const std::string& kind() const noexcept { return kind_; }

 private:
  ErrorCategory category_;
  std::string kind_;
};

#define CAC_DEFINE_ERROR(Name, category, tag)                  \
  class Name : public Error {                                  \
   public:                                                     \
    explicit Name(const std::string& what)                     \
        : Error(ErrorCategory::category, tag, what) {}         \
  };

CAC_DEFINE_ERROR(ShapeError, usage, "shape")
CAC_DEFINE_ERROR(DomainError, usage, "domain")
CAC_DEFINE_ERROR(UsageError, usage, "usage")
CAC_DEFINE_ERROR(NumericError, runtime, "numeric")
CAC_DEFINE_ERROR(IoError, runtime, "io")
CAC_DEFINE_ERROR(ConfigError, validation, "config")
CAC_DEFINE_ERROR(IngestionError, validation, "ingestion")
CAC_DEFINE_ERROR(LoadError, validation, "load")
CAC_DEFINE_ERROR(IncompatibleCheckpointError, validation, "incompatible_checkpoint")

#undef CAC_DEFINE_ERROR

}  // namespace cac
