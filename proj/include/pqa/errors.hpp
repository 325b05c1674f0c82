#pragma once

#include <stdexcept>
#include <string>

namespace pqa {

// Invalid argument values (tau <= 0, bits outside [2,16], empty inputs, ...).
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Inconsistent tensor/matrix/layer shapes.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Singular systems, non-finite results.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File system and file format problems. The message always carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed model spec / config documents.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace pqa
