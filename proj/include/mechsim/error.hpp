#pragma once

#include <stdexcept>
#include <string>

namespace mechsim {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Shape, range or invariant violation in caller-supplied data.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// A file does not match its on-disk format.
class FormatError : public Error {
  public:
    using Error::Error;
};

/// A required (domain, class) group or other keyed entry is absent or empty.
class MissingDataError : public Error {
  public:
    using Error::Error;
};

/// Input is well-formed but numerically degenerate (zero bandwidth,
/// non-positive self-HSIC, antipodal template embeddings, ...).
class DegenerateInputError : public Error {
  public:
    using Error::Error;
};

/// SAE optimisation produced a non-finite loss.
class TrainingDivergenceError : public Error {
  public:
    using Error::Error;
};

} // namespace mechsim
