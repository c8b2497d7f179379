#pragma once

#include <stdexcept>
#include <string>

namespace maskfuse {

// Error categories map 1:1 onto CLI exit behaviour: config-class errors exit 2,
// everything else exits 1.
enum class ErrorCategory {
    Config,        // bad config file, unknown key, invalid override, bad schedule bounds
    Contract,      // shape mismatch, out-of-range timestep, non-binary mask
    Ingestion,     // unreadable or incompatible input image
    Capability,    // backend lacks a required feature (e.g. gradients)
    Initialization,// mask initialization could not anchor a concept
    Evaluation,    // evaluation client failure
    Io             // file read/write failure
};

const char* to_string(ErrorCategory c);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& message)
        : std::runtime_error(message), category_(category) {}
    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error(ErrorCategory::Config, m) {}
};
struct ContractViolation : Error {
    explicit ContractViolation(const std::string& m) : Error(ErrorCategory::Contract, m) {}
};
struct IngestionError : Error {
    explicit IngestionError(const std::string& m) : Error(ErrorCategory::Ingestion, m) {}
};
struct CapabilityError : Error {
    explicit CapabilityError(const std::string& m) : Error(ErrorCategory::Capability, m) {}
};
struct InitializationError : Error {
    explicit InitializationError(const std::string& m) : Error(ErrorCategory::Initialization, m) {}
};
struct EvaluationError : Error {
    explicit EvaluationError(const std::string& m) : Error(ErrorCategory::Evaluation, m) {}
};
struct IoError : Error {
    explicit IoError(const std::string& m) : Error(ErrorCategory::Io, m) {}
};

}  // namespace maskfuse
