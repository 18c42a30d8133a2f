#pragma once

#include <stdexcept>
#include <string>

namespace fedapa {

// Base class for all library errors; everything thrown here derives from it
// so callers can catch fedapa::Error at the CLI boundary.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define FEDAPA_DEFINE_ERROR(NAME)                                   \
    class NAME : public Error {                                     \
    public:                                                         \
        explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
    }

FEDAPA_DEFINE_ERROR(DimensionMismatch);
FEDAPA_DEFINE_ERROR(ZeroVector);
FEDAPA_DEFINE_ERROR(EmptyInput);
FEDAPA_DEFINE_ERROR(NonPositiveTemperature);
FEDAPA_DEFINE_ERROR(NonFiniteEvaluation);
FEDAPA_DEFINE_ERROR(NonPositiveBeta);
FEDAPA_DEFINE_ERROR(InvalidSpec);
FEDAPA_DEFINE_ERROR(ParseError);
FEDAPA_DEFINE_ERROR(InconsistentDim);
FEDAPA_DEFINE_ERROR(LabelOutOfRange);
FEDAPA_DEFINE_ERROR(EmptyDataset);
FEDAPA_DEFINE_ERROR(UnknownArch);
FEDAPA_DEFINE_ERROR(ShapeMismatch);
FEDAPA_DEFINE_ERROR(MissingClassPrototype);
FEDAPA_DEFINE_ERROR(ClassAbsentAtClient);
FEDAPA_DEFINE_ERROR(ClassUncoveredGlobally);
FEDAPA_DEFINE_ERROR(MissingUpload);
FEDAPA_DEFINE_ERROR(EmptyTestSet);
FEDAPA_DEFINE_ERROR(LengthMismatch);
FEDAPA_DEFINE_ERROR(InsufficientTrace);
FEDAPA_DEFINE_ERROR(ConfigError);
FEDAPA_DEFINE_ERROR(IoError);

#undef FEDAPA_DEFINE_ERROR

}  // namespace fedapa
