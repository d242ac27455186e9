#pragma once

#include <stdexcept>
#include <string>

namespace slipstab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct EmptyCloud : Error {
    EmptyCloud() : Error("oriented cloud is empty") {}
};

struct AllZeroWeights : Error {
    AllZeroWeights() : Error("no positive weight in rotation mean") {}
};

struct NumericalFailure : Error {
    explicit NumericalFailure(const std::string& what) : Error(what) {}
};

struct DegenerateCollinear : Error {
    DegenerateCollinear() : Error("points are collinear; plane fit is degenerate") {}
};

struct DegenerateArc : Error {
    DegenerateArc() : Error("cylinder arc coverage too small") {}
};

struct NoConvergence : Error {
    explicit NoConvergence(const std::string& what) : Error(what) {}
};

struct SingularNormalEquations : Error {
    SingularNormalEquations() : Error("normal equations are rank deficient") {}
};

struct LengthMismatch : Error {
    LengthMismatch() : Error("pose lists differ in length") {}
};

struct NonFiniteEntry : Error {
    NonFiniteEntry() : Error("matrix contains a non-finite entry") {}
};

struct EmptyHypothesisSet : Error {
    EmptyHypothesisSet() : Error("no pose hypotheses to fuse") {}
};

struct EmptyMask : Error {
    EmptyMask() : Error("object mask has no pixels") {}
};

struct InvalidDimensions : Error {
    explicit InvalidDimensions(const std::string& what) : Error(what) {}
};

struct DegenerateObservation : Error {
    explicit DegenerateObservation(const std::string& what) : Error(what) {}
};

struct EmptySet : Error {
    EmptySet() : Error("recall over an empty report set") {}
};

struct IntrinsicsMismatch : Error {
    explicit IntrinsicsMismatch(const std::string& what) : Error(what) {}
};

}  // namespace slipstab
