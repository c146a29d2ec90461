#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace refjoint {

// Every failure carries a stable kind tag so the CLI can print a
// machine-parsable prefix ("error[Kind]: ...").
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind)) {}

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

#define REFJOINT_DEFINE_ERROR(Name)                                  \
    class Name : public Error {                                      \
    public:                                                          \
        explicit Name(const std::string& what) : Error(#Name, what) {} \
    };

REFJOINT_DEFINE_ERROR(InvalidArgument)
REFJOINT_DEFINE_ERROR(DimensionMismatch)
REFJOINT_DEFINE_ERROR(ConstantColumn)
REFJOINT_DEFINE_ERROR(SingularMatrix)
REFJOINT_DEFINE_ERROR(NonPositiveVariance)
REFJOINT_DEFINE_ERROR(NotPositiveSemidefinite)
REFJOINT_DEFINE_ERROR(DegenerateDirection)
REFJOINT_DEFINE_ERROR(EmptyRegion)
REFJOINT_DEFINE_ERROR(NumericalUnderflow)
REFJOINT_DEFINE_ERROR(ZeroSignal)
REFJOINT_DEFINE_ERROR(SelectionNeverOccurred)
REFJOINT_DEFINE_ERROR(ParseError)
REFJOINT_DEFINE_ERROR(InconsistentN)
REFJOINT_DEFINE_ERROR(IdMismatch)

#undef REFJOINT_DEFINE_ERROR

}  // namespace refjoint
