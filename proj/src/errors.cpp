#include "maskfuse/errors.hpp"

namespace maskfuse {

const char* to_string(ErrorCategory c) {
    switch (c) {
        case ErrorCategory::Config: return "config";
        case ErrorCategory::Contract: return "contract";
        case ErrorCategory::Ingestion: return "ingestion";
        case ErrorCategory::Capability: return "capability";
        case ErrorCategory::Initialization: return "initialization";
        case ErrorCategory::Evaluation: return "evaluation";
        case ErrorCategory::Io: return "io";
    }
    return "unknown";
}

}  // namespace maskfuse
