#pragma once

#include <stdexcept>
#include <string>

namespace invsketch {

// Base of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define INVSKETCH_DEFINE_ERROR(Name)      \
  class Name : public Error {             \
   public:                                \
    using Error::Error;                   \
  };

INVSKETCH_DEFINE_ERROR(BlankImage)
INVSKETCH_DEFINE_ERROR(UnknownAttribute)
INVSKETCH_DEFINE_ERROR(BrokenPair)
INVSKETCH_DEFINE_ERROR(ParseError)
INVSKETCH_DEFINE_ERROR(ShapeError)
INVSKETCH_DEFINE_ERROR(DegenerateFeature)
INVSKETCH_DEFINE_ERROR(BatchTooSmall)
INVSKETCH_DEFINE_ERROR(EmptyGallery)
INVSKETCH_DEFINE_ERROR(IndexError)
INVSKETCH_DEFINE_ERROR(InvalidK)
INVSKETCH_DEFINE_ERROR(InvalidWeights)
INVSKETCH_DEFINE_ERROR(IoError)

#undef INVSKETCH_DEFINE_ERROR

// Raised when a training loss becomes non-finite.
class NumericalDivergence : public Error {
 public:
  NumericalDivergence(long iteration, const std::string& term)
      : Error("non-finite " + term + " at iteration " + std::to_string(iteration)),
        iteration_(iteration) {}
  long iteration() const { return iteration_; }

 private:
  long iteration_;
};

}  // namespace invsketch
