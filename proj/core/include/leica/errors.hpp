#pragma once

#include <stdexcept>
#include <string>

namespace leica {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible dimensions between two inputs (image vs patch size,
// feature dim vs codebook dim, map lengths, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A persisted file is malformed: bad magic, truncated, hash mismatch.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inputs produced by different codebooks, or K disagreement.
class VocabularyError : public Error {
 public:
  using Error::Error;
};

// Caller passed a value outside the documented domain.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Zero-norm embedding, zero-variance correlation input and the like.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

}  // namespace leica
