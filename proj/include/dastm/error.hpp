#pragma once

#include <stdexcept>
#include <string>

namespace dastm {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Invalid layer or run configuration (non-integral conv output, unknown key, ...).
class ConfigError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Scalar parameter outside its domain (tau <= 0, negative budget, ...).
class ParameterError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// NaN or Inf detected in a training or tracking loop.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace dastm
