#pragma once

#include <stdexcept>
#include <string>

namespace biosession {

// One code per error identity named in the module contracts. Callers that
// need to branch on the failure mode check code(); the message carries the
// offending field path or value.
enum class ErrorCode {
    Schema,
    Invariant,
    NotFound,
    ZeroDuration,
    CutoffTooHigh,
    EmptyTrace,
    TooSparse,
    TooShort,
    DegenerateBaseline,
    DegeneratePipeline,
    WindowTooSmall,
    LengthMismatch,
    ConstantInput,
    SingleGroup,
    DegenerateAgreement,
    MissingCells,
    AllZeroDiffs,
    EmptyGroup,
    OutOfRange,
    RankDeficient,
    NotConverged,
    ZeroVariance,
    PerplexityTooLarge,
    KTooLarge,
    SingletonOnly,
    CoincidentCentroids,
    SpecError,
    IncompleteBundle,
    Io,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

} // namespace biosession
