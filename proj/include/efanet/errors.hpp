#pragma once

#include <stdexcept>
#include <string>

namespace efanet {

// Rejected tensor shapes / incompatible operands.
class ShapeError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

// Malformed or inconsistent configuration, manifests and dataset files.
class ConfigError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// NaN/Inf encountered during training.
class NumericError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

}  // namespace efanet
